#include "lims/store.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cctype>
#include <map>

#include "json.hpp"

namespace lims {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(sqlite3* db, int rc, std::string_view what) {
  auto kind = (rc & 0xff) == SQLITE_CONSTRAINT ? StoreError::Kind::ConstraintViolation : StoreError::Kind::Io;
  throw StoreError(kind, std::string(what) + ": " + (db ? sqlite3_errmsg(db) : sqlite3_errstr(rc)));
}

class Stmt {
 public:
  Stmt(sqlite3* db, std::string_view sql) : db_(db) {
    int rc = sqlite3_prepare_v2(db, sql.data(), static_cast<int>(sql.size()), &st_, nullptr);
    if (rc != SQLITE_OK) fail(db, rc, "prepare");
  }
  ~Stmt() { sqlite3_finalize(st_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(st_, i, v));
    return *this;
  }
  Stmt& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, std::uint64_t v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, double v) {
    check(sqlite3_bind_double(st_, i, v));
    return *this;
  }
  Stmt& bind(int i, std::string_view v) {
    check(sqlite3_bind_text(st_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, const std::string& v) { return bind(i, std::string_view(v)); }
  Stmt& bind(int i, const char* v) { return bind(i, std::string_view(v)); }
  Stmt& bind(int i, TimePoint t) { return bind(i, to_micros(t)); }
  Stmt& bind(int i, std::nullopt_t) {
    check(sqlite3_bind_null(st_, i));
    return *this;
  }
  template <class T>
  Stmt& bind(int i, const std::optional<T>& v) {
    return v ? bind(i, *v) : bind(i, std::nullopt);
  }

  template <class... A>
  Stmt& args(const A&... a) {
    int i = 0;
    (bind(++i, a), ...);
    return *this;
  }

  /// True while a row is available.
  bool step() {
    int rc = sqlite3_step(st_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(db_, rc, "step");
  }
  void run() {
    while (step()) {
    }
  }
  void reset() {
    sqlite3_reset(st_);
    sqlite3_clear_bindings(st_);
  }

  bool null(int c) const { return sqlite3_column_type(st_, c) == SQLITE_NULL; }
  std::int64_t i64(int c) const { return sqlite3_column_int64(st_, c); }
  double dbl(int c) const { return sqlite3_column_double(st_, c); }
  std::string str(int c) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(st_, c));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(st_, c))) : std::string();
  }
  TimePoint time(int c) const { return from_micros(i64(c)); }
  std::optional<std::int64_t> opt_i64(int c) const { return null(c) ? std::nullopt : std::optional(i64(c)); }
  std::optional<std::string> opt_str(int c) const { return null(c) ? std::nullopt : std::optional(str(c)); }
  std::optional<TimePoint> opt_time(int c) const { return null(c) ? std::nullopt : std::optional(time(c)); }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) fail(db_, rc, "bind");
  }

  sqlite3* db_;
  sqlite3_stmt* st_ = nullptr;
};

// Forward-only migrations; index i brings the schema to version i + 1.
const char* const kMigrations[] = {
    R"sql(
CREATE TABLE projects(
  id INTEGER PRIMARY KEY,
  name TEXT NOT NULL UNIQUE,
  description TEXT NOT NULL DEFAULT '');
CREATE TABLE samples(
  id INTEGER PRIMARY KEY,
  sample_code TEXT NOT NULL UNIQUE,
  project_id INTEGER REFERENCES projects(id),
  description TEXT NOT NULL DEFAULT '',
  storage_method TEXT NOT NULL DEFAULT '');
CREATE TABLE tools(
  id INTEGER PRIMARY KEY,
  name TEXT NOT NULL UNIQUE,
  kind TEXT NOT NULL,
  external_id INTEGER);
CREATE TABLE operators(
  id INTEGER PRIMARY KEY,
  username TEXT NOT NULL UNIQUE);
CREATE TABLE procedures(
  id INTEGER PRIMARY KEY,
  name TEXT NOT NULL,
  kind TEXT NOT NULL,
  external_id INTEGER,
  UNIQUE(name, kind));
CREATE TABLE events(
  id INTEGER PRIMARY KEY,
  kind TEXT NOT NULL CHECK(kind IN ('Measurement', 'Processing')),
  tool_id INTEGER NOT NULL REFERENCES tools(id),
  operator_id INTEGER REFERENCES operators(id),
  sample_id INTEGER REFERENCES samples(id),
  occurred_at INTEGER NOT NULL,
  procedure_name TEXT NOT NULL);
CREATE TABLE measurement_events(
  event_id INTEGER PRIMARY KEY REFERENCES events(id) ON DELETE CASCADE,
  procedure_id INTEGER REFERENCES procedures(id));
CREATE TABLE processing_events(
  event_id INTEGER PRIMARY KEY REFERENCES events(id) ON DELETE CASCADE,
  recipe_id INTEGER REFERENCES procedures(id));
CREATE TABLE file_information(
  id INTEGER PRIMARY KEY,
  event_id INTEGER NOT NULL REFERENCES events(id),
  archive_path TEXT NOT NULL,
  original_path TEXT NOT NULL,
  file_timestamp INTEGER NOT NULL,
  size INTEGER NOT NULL,
  version INTEGER NOT NULL CHECK(version >= 1),
  content_hash TEXT NOT NULL DEFAULT '',
  extracted_at INTEGER,
  doc_id TEXT NOT NULL DEFAULT '',
  doc_timestamp TEXT NOT NULL DEFAULT '',
  link_timestamp TEXT NOT NULL DEFAULT '',
  comments TEXT NOT NULL DEFAULT '',
  operator_ref INTEGER,
  aggregate_count INTEGER NOT NULL DEFAULT 0,
  UNIQUE(archive_path, version));
CREATE INDEX file_information_event ON file_information(event_id);
CREATE TABLE file_metadata(
  id INTEGER PRIMARY KEY,
  file_id INTEGER NOT NULL REFERENCES file_information(id) ON DELETE CASCADE,
  aggregate_index INTEGER NOT NULL,
  position INTEGER NOT NULL,
  name TEXT NOT NULL,
  value TEXT,
  units TEXT NOT NULL,
  comments TEXT,
  extra_attributes TEXT NOT NULL DEFAULT '[]');
CREATE INDEX file_metadata_file ON file_metadata(file_id);
CREATE TABLE data_arrays(
  id INTEGER PRIMARY KEY,
  file_id INTEGER NOT NULL REFERENCES file_information(id) ON DELETE CASCADE,
  aggregate_index INTEGER NOT NULL,
  position INTEGER NOT NULL,
  descriptor_name TEXT NOT NULL,
  descriptors TEXT NOT NULL,
  vals TEXT NOT NULL,
  lexemes TEXT NOT NULL);
CREATE INDEX data_arrays_file ON data_arrays(file_id);
CREATE INDEX data_arrays_descriptor ON data_arrays(descriptor_name);
CREATE TABLE jv_curves(
  id INTEGER PRIMARY KEY,
  file_id INTEGER NOT NULL REFERENCES file_information(id) ON DELETE CASCADE,
  sample_id INTEGER REFERENCES samples(id),
  device_id TEXT NOT NULL,
  aggregate_index INTEGER NOT NULL);
CREATE INDEX jv_curves_file ON jv_curves(file_id);
CREATE TABLE jv_points(
  curve_id INTEGER NOT NULL REFERENCES jv_curves(id) ON DELETE CASCADE,
  position INTEGER NOT NULL,
  voltage REAL NOT NULL,
  current REAL NOT NULL,
  PRIMARY KEY(curve_id, position));
CREATE TABLE annotations(
  id INTEGER PRIMARY KEY,
  target_kind TEXT NOT NULL,
  target_id INTEGER NOT NULL,
  author TEXT NOT NULL,
  text TEXT NOT NULL,
  links TEXT NOT NULL,
  created_at INTEGER NOT NULL);
CREATE INDEX annotations_target ON annotations(target_kind, target_id);
CREATE TABLE harvest_log(
  id INTEGER PRIMARY KEY,
  instrument_name TEXT NOT NULL,
  source_host TEXT NOT NULL,
  source_path TEXT NOT NULL,
  size INTEGER NOT NULL,
  mtime INTEGER NOT NULL,
  detected_at INTEGER NOT NULL,
  notified_at INTEGER,
  harvested_at INTEGER,
  archive_path TEXT,
  extracted_at INTEGER,
  status TEXT NOT NULL,
  progress INTEGER NOT NULL DEFAULT 0,
  error_detail TEXT,
  version INTEGER NOT NULL CHECK(version >= 1),
  attempts INTEGER NOT NULL DEFAULT 0,
  updated_at INTEGER NOT NULL,
  UNIQUE(instrument_name, source_path, version));
CREATE INDEX harvest_log_source ON harvest_log(source_host, source_path);
CREATE INDEX harvest_log_archive ON harvest_log(archive_path);
CREATE TABLE extraction_receipts(
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  file_id INTEGER NOT NULL,
  version INTEGER NOT NULL,
  tool_name TEXT NOT NULL,
  sample_code TEXT,
  project TEXT,
  project_id INTEGER,
  archive_path TEXT NOT NULL,
  extracted_at INTEGER NOT NULL,
  array_count INTEGER NOT NULL,
  semantic_count INTEGER NOT NULL,
  skipped_rows INTEGER NOT NULL);
CREATE TABLE user_grants(
  username TEXT NOT NULL,
  project_id INTEGER NOT NULL REFERENCES projects(id),
  PRIMARY KEY(username, project_id));
)sql",
};

std::string_view kind_name(EventKind k) { return k == EventKind::Measurement ? "Measurement" : "Processing"; }

int rank(LogStatus s) {
  switch (s) {
    case LogStatus::Detected: return 0;
    case LogStatus::Notified: return 1;
    case LogStatus::Harvested: return 2;
    case LogStatus::Extracted: return 3;
    case LogStatus::Failed: return -1;
  }
  return -1;
}

LogStatus parse_status(const std::string& s) {
  for (auto st : {LogStatus::Detected, LogStatus::Notified, LogStatus::Harvested, LogStatus::Extracted,
                  LogStatus::Failed})
    if (to_string(st) == s) return st;
  throw StoreError(StoreError::Kind::Io, "corrupt harvest_log status '" + s + "'");
}

const char* kLogColumns =
    "id, instrument_name, source_host, source_path, size, mtime, detected_at, notified_at, harvested_at, "
    "archive_path, extracted_at, status, error_detail, version, attempts, progress, updated_at";

HarvestLogEntry read_log(const Stmt& st) {
  HarvestLogEntry e;
  e.entry_id = st.i64(0);
  e.instrument_name = st.str(1);
  e.source_host = st.str(2);
  e.source_path = st.str(3);
  e.size = static_cast<std::uint64_t>(st.i64(4));
  e.mtime = st.time(5);
  e.detected_at = st.time(6);
  e.notified_at = st.opt_time(7);
  e.harvested_at = st.opt_time(8);
  e.archive_path = st.opt_str(9);
  e.extracted_at = st.opt_time(10);
  e.status = parse_status(st.str(11));
  e.error_detail = st.opt_str(12);
  e.version = static_cast<int>(st.i64(13));
  e.attempts = static_cast<int>(st.i64(14));
  e.progress = static_cast<int>(st.i64(15));
  e.updated_at = st.time(16);
  return e;
}

const char* kFileColumns =
    "id, event_id, archive_path, original_path, file_timestamp, size, version, content_hash, extracted_at";

FileInformation read_file_info(const Stmt& st) {
  FileInformation f;
  f.id = st.i64(0);
  f.event_id = st.i64(1);
  f.archive_path = st.str(2);
  f.original_path = st.str(3);
  f.file_timestamp = st.time(4);
  f.size = static_cast<std::uint64_t>(st.i64(5));
  f.version = static_cast<int>(st.i64(6));
  f.content_hash = st.str(7);
  f.extracted_at = st.opt_time(8);
  return f;
}

json values_json(const std::vector<std::optional<double>>& values) {
  json arr = json::array();
  for (const auto& v : values) arr.push_back(v ? json(*v) : json(nullptr));
  return arr;
}

std::string scope_clause(const Scope& scope, const char* column) {
  if (!scope) return "1";
  std::string out = std::string("(") + column + " IS NULL";
  if (!scope->empty()) {
    out += std::string(" OR ") + column + " IN (";
    for (std::size_t i = 0; i < scope->size(); ++i) out += (i ? "," : "") + std::to_string((*scope)[i]);
    out += ")";
  }
  return out + ")";
}

}  // namespace

std::string_view to_string(TargetKind k) {
  switch (k) {
    case TargetKind::Sample: return "sample";
    case TargetKind::File: return "file";
    case TargetKind::Event: return "event";
    case TargetKind::Project: return "project";
  }
  return "?";
}

std::optional<TargetKind> parse_target_kind(std::string_view s) {
  for (auto k : {TargetKind::Sample, TargetKind::File, TargetKind::Event, TargetKind::Project})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string_view to_string(LogStatus s) {
  switch (s) {
    case LogStatus::Detected: return "Detected";
    case LogStatus::Notified: return "Notified";
    case LogStatus::Harvested: return "Harvested";
    case LogStatus::Extracted: return "Extracted";
    case LogStatus::Failed: return "Failed";
  }
  return "?";
}

// ---- connection ------------------------------------------------------------

Store::Store(const std::filesystem::path& path) {
  bool memory = path == ":memory:";
  if (!memory && path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  int rc = sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX,
                           nullptr);
  if (rc != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : sqlite3_errstr(rc);
    sqlite3_close(db_);
    db_ = nullptr;
    throw StoreError(StoreError::Kind::Io, "cannot open store " + path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 15'000);
  exec("PRAGMA foreign_keys = ON");
  if (!memory) {
    exec("PRAGMA journal_mode = WAL");
    exec("PRAGMA synchronous = NORMAL");
  }
  migrate();
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec(const char* sql) {
  char* err = nullptr;
  int rc = sqlite3_exec(db_, sql, nullptr, nullptr, &err);
  if (rc != SQLITE_OK) {
    std::string msg = err ? err : sqlite3_errstr(rc);
    sqlite3_free(err);
    auto kind = (rc & 0xff) == SQLITE_CONSTRAINT ? StoreError::Kind::ConstraintViolation : StoreError::Kind::Io;
    throw StoreError(kind, msg);
  }
}

void Store::begin() {
  if (depth_ == 0) {
    exec("BEGIN IMMEDIATE");
  } else {
    exec(("SAVEPOINT sp" + std::to_string(depth_)).c_str());
  }
  ++depth_;
}

void Store::commit() {
  --depth_;
  try {
    if (depth_ == 0) {
      exec("COMMIT");
    } else {
      exec(("RELEASE sp" + std::to_string(depth_)).c_str());
    }
  } catch (...) {
    ++depth_;
    throw;
  }
}

void Store::rollback() {
  --depth_;
  if (depth_ == 0) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  } else {
    auto sp = "sp" + std::to_string(depth_);
    sqlite3_exec(db_, ("ROLLBACK TO " + sp + "; RELEASE " + sp).c_str(), nullptr, nullptr, nullptr);
  }
}

void Store::set_fault_hook(std::function<void(std::string_view)> hook) {
  std::lock_guard lock(mu_);
  fault_hook_ = std::move(hook);
}

void Store::fault(std::string_view point) {
  if (fault_hook_) fault_hook_(point);
}

void Store::migrate() {
  transact([&] {
    exec("CREATE TABLE IF NOT EXISTS schema_version(version INTEGER NOT NULL)");
    Stmt q(db_, "SELECT MAX(version) FROM schema_version");
    int current = q.step() && !q.null(0) ? static_cast<int>(q.i64(0)) : 0;
    const int target = static_cast<int>(std::size(kMigrations));
    if (current > target)
      throw StoreError(StoreError::Kind::Io,
                       "store schema version " + std::to_string(current) + " is newer than this build");
    for (int v = current; v < target; ++v) {
      exec(kMigrations[v]);
      Stmt(db_, "INSERT INTO schema_version(version) VALUES (?)").args(v + 1).run();
    }
  });
}

// ---- entities --------------------------------------------------------------

ResolvedIds Store::register_entities(const ToolInfo& tool, const std::optional<std::string>& sample_code,
                                     const std::optional<std::string>& project,
                                     const std::optional<std::string>& operator_username) {
  return transact([&] {
    ResolvedIds ids;
    Stmt(db_, "INSERT OR IGNORE INTO tools(name, kind, external_id) VALUES (?, ?, ?)")
        .args(tool.name, to_string(tool.kind), tool.id)
        .run();
    if (tool.id)
      Stmt(db_, "UPDATE tools SET external_id = ? WHERE name = ? AND external_id IS NULL")
          .args(*tool.id, tool.name)
          .run();
    {
      Stmt q(db_, "SELECT id FROM tools WHERE name = ?");
      q.args(tool.name).step();
      ids.tool_id = q.i64(0);
    }
    if (project) {
      Stmt(db_, "INSERT OR IGNORE INTO projects(name) VALUES (?)").args(*project).run();
      Stmt q(db_, "SELECT id FROM projects WHERE name = ?");
      q.args(*project).step();
      ids.project_id = q.i64(0);
    }
    if (sample_code) {
      Stmt(db_, "INSERT OR IGNORE INTO samples(sample_code, project_id) VALUES (?, ?)")
          .args(*sample_code, ids.project_id)
          .run();
      if (ids.project_id)
        Stmt(db_, "UPDATE samples SET project_id = ? WHERE sample_code = ? AND project_id IS NULL")
            .args(*ids.project_id, *sample_code)
            .run();
      Stmt q(db_, "SELECT id, project_id FROM samples WHERE sample_code = ?");
      q.args(*sample_code).step();
      ids.sample_id = q.i64(0);
      ids.project_id = q.opt_i64(1);
    }
    if (operator_username) {
      Stmt(db_, "INSERT OR IGNORE INTO operators(username) VALUES (?)").args(*operator_username).run();
      Stmt q(db_, "SELECT id FROM operators WHERE username = ?");
      q.args(*operator_username).step();
      ids.operator_id = q.i64(0);
    }
    return ids;
  });
}

Id Store::create_event(EventRecord ev, std::optional<Id> external_type_id) {
  return transact([&] {
    Stmt(db_,
         "INSERT INTO events(kind, tool_id, operator_id, sample_id, occurred_at, procedure_name) "
         "VALUES (?, ?, ?, ?, ?, ?)")
        .args(kind_name(ev.kind), ev.tool_id, ev.operator_id, ev.sample_id, ev.occurred_at, ev.procedure_name)
        .run();
    Id event_id = sqlite3_last_insert_rowid(db_);
    auto proc_kind = ev.kind == EventKind::Measurement ? "measurement" : "recipe";
    Stmt(db_, "INSERT OR IGNORE INTO procedures(name, kind, external_id) VALUES (?, ?, ?)")
        .args(ev.procedure_name, proc_kind, external_type_id)
        .run();
    Id proc_id;
    {
      Stmt q(db_, "SELECT id FROM procedures WHERE name = ? AND kind = ?");
      q.args(ev.procedure_name, proc_kind).step();
      proc_id = q.i64(0);
    }
    if (ev.kind == EventKind::Measurement) {
      Stmt(db_, "INSERT INTO measurement_events(event_id, procedure_id) VALUES (?, ?)").args(event_id, proc_id).run();
    } else {
      Stmt(db_, "INSERT INTO processing_events(event_id, recipe_id) VALUES (?, ?)").args(event_id, proc_id).run();
    }
    return event_id;
  });
}

EventRecord Store::event(Id id) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT id, kind, tool_id, operator_id, sample_id, occurred_at, procedure_name FROM events WHERE id = ?");
  if (!q.args(id).step()) throw StoreError(StoreError::Kind::NotFound, "event " + std::to_string(id) + " not found");
  EventRecord ev;
  ev.id = q.i64(0);
  ev.kind = q.str(1) == "Processing" ? EventKind::Processing : EventKind::Measurement;
  ev.tool_id = q.i64(2);
  ev.operator_id = q.opt_i64(3);
  ev.sample_id = q.opt_i64(4);
  ev.occurred_at = q.time(5);
  ev.procedure_name = q.str(6);
  return ev;
}

// ---- generic model ---------------------------------------------------------

std::vector<Id> Store::write_contents(Id file_id, const DataDocument& doc) {
  std::vector<Id> array_ids;
  Stmt meta(db_,
            "INSERT INTO file_metadata(file_id, aggregate_index, position, name, value, units, comments, "
            "extra_attributes) VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
  Stmt arr(db_,
           "INSERT INTO data_arrays(file_id, aggregate_index, position, descriptor_name, descriptors, vals, lexemes) "
           "VALUES (?, ?, ?, ?, ?, ?, ?)");
  for (std::size_t a = 0; a < doc.aggregates.size(); ++a) {
    const auto& agg = doc.aggregates[a];
    for (std::size_t i = 0; i < agg.metadata.size(); ++i) {
      const auto& m = agg.metadata[i];
      json extra = json::array();
      for (const auto& attr : m.extra_attributes) extra.push_back({attr.first, attr.second});
      meta.reset();
      meta.args(file_id, static_cast<int>(a), static_cast<int>(i), m.name, m.value, m.units, m.comments, extra.dump())
          .run();
    }
    for (std::size_t i = 0; i < agg.series.size(); ++i) {
      const auto& s = agg.series[i];
      json descriptors = {s.descriptor.name, s.descriptor.units};
      arr.reset();
      arr.args(file_id, static_cast<int>(a), static_cast<int>(i), s.descriptor.name, descriptors.dump(),
               values_json(s.numeric()).dump(), json(s.data).dump())
          .run();
      array_ids.push_back(sqlite3_last_insert_rowid(db_));
      fault("array_inserted");
    }
  }
  Stmt(db_, "UPDATE file_information SET aggregate_count = ? WHERE id = ?")
      .args(static_cast<int>(doc.aggregates.size()), file_id)
      .run();
  return array_ids;
}

InsertResult Store::insert_file_with_arrays(const DataDocument& doc, const FileInformation& info) {
  return transact([&] {
    Stmt ins(db_,
             "INSERT INTO file_information(event_id, archive_path, original_path, file_timestamp, size, version, "
             "content_hash, extracted_at, doc_id, doc_timestamp, link_timestamp, comments, operator_ref) "
             "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
    ins.args(info.event_id, info.archive_path, info.original_path, info.file_timestamp, info.size, info.version,
             info.content_hash, info.extracted_at, doc.doc_id, doc.timestamp.str(), doc.data_file_link.timestamp.str(),
             doc.comments, doc.operator_id);
    try {
      ins.run();
    } catch (const StoreError& e) {
      if (e.kind() == StoreError::Kind::ConstraintViolation)
        throw StoreError(e.kind(), "file " + info.archive_path + " version " + std::to_string(info.version) +
                                       " already stored (" + e.what() + ")");
      throw;
    }
    InsertResult r;
    r.file_id = sqlite3_last_insert_rowid(db_);
    fault("file_inserted");
    r.array_ids = write_contents(r.file_id, doc);
    return r;
  });
}

InsertResult Store::replace_file(Id file_id, const DataDocument& doc, const FileInformation& info) {
  return transact([&] {
    auto existing = file(file_id);
    if (!existing) throw StoreError(StoreError::Kind::NotFound, "file " + std::to_string(file_id) + " not found");
    Stmt(db_, "DELETE FROM jv_curves WHERE file_id = ?").args(file_id).run();
    Stmt(db_, "DELETE FROM data_arrays WHERE file_id = ?").args(file_id).run();
    Stmt(db_, "DELETE FROM file_metadata WHERE file_id = ?").args(file_id).run();
    Stmt(db_,
         "UPDATE file_information SET archive_path = ?, original_path = ?, file_timestamp = ?, size = ?, version = ?, "
         "content_hash = ?, extracted_at = ?, doc_id = ?, doc_timestamp = ?, link_timestamp = ?, comments = ?, "
         "operator_ref = ? WHERE id = ?")
        .args(info.archive_path, info.original_path, info.file_timestamp, info.size, info.version, info.content_hash,
              info.extracted_at, doc.doc_id, doc.timestamp.str(), doc.data_file_link.timestamp.str(), doc.comments,
              doc.operator_id, file_id)
        .run();
    fault("file_updated");
    return InsertResult{file_id, write_contents(file_id, doc)};
  });
}

std::optional<FileInformation> Store::file(Id id) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kFileColumns + " FROM file_information WHERE id = ?");
  if (!q.args(id).step()) return std::nullopt;
  return read_file_info(q);
}

std::optional<FileInformation> Store::file_by_archive_path(std::string_view archive_path) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kFileColumns +
                  " FROM file_information WHERE archive_path = ? ORDER BY version DESC LIMIT 1");
  if (!q.args(archive_path).step()) return std::nullopt;
  return read_file_info(q);
}

std::vector<DataArray> Store::arrays(Id file_id) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT id, file_id, aggregate_index, position, descriptors, vals, lexemes FROM data_arrays "
         "WHERE file_id = ? ORDER BY aggregate_index, position");
  q.args(file_id);
  std::vector<DataArray> out;
  while (q.step()) {
    DataArray a;
    a.id = q.i64(0);
    a.file_id = q.i64(1);
    a.aggregate_index = static_cast<int>(q.i64(2));
    a.position = static_cast<int>(q.i64(3));
    a.descriptors = json::parse(q.str(4)).get<std::vector<std::string>>();
    for (const auto& v : json::parse(q.str(5)))
      a.values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    a.lexemes = json::parse(q.str(6)).get<std::vector<std::string>>();
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<std::pair<int, MetaDatum>> Store::metadata(Id file_id) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT aggregate_index, name, value, units, comments, extra_attributes FROM file_metadata "
         "WHERE file_id = ? ORDER BY aggregate_index, position");
  q.args(file_id);
  std::vector<std::pair<int, MetaDatum>> out;
  while (q.step()) {
    MetaDatum m;
    m.name = q.str(1);
    m.value = q.opt_str(2);
    m.units = q.str(3);
    m.comments = q.opt_str(4);
    for (const auto& pair : json::parse(q.str(5)))
      m.extra_attributes.push_back({pair.at(0).get<std::string>(), pair.at(1).get<std::string>()});
    out.emplace_back(static_cast<int>(q.i64(0)), std::move(m));
  }
  return out;
}

DataDocument Store::load_document(Id file_id) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT f.archive_path, f.doc_id, f.doc_timestamp, f.link_timestamp, f.comments, f.operator_ref, "
         "f.aggregate_count, e.kind, e.procedure_name, t.name, t.external_id, pr.external_id "
         "FROM file_information f JOIN events e ON e.id = f.event_id JOIN tools t ON t.id = e.tool_id "
         "LEFT JOIN measurement_events me ON me.event_id = e.id "
         "LEFT JOIN processing_events pe ON pe.event_id = e.id "
         "LEFT JOIN procedures pr ON pr.id = COALESCE(me.procedure_id, pe.recipe_id) "
         "WHERE f.id = ?");
  if (!q.args(file_id).step())
    throw StoreError(StoreError::Kind::NotFound, "file " + std::to_string(file_id) + " not found");
  DataDocument doc;
  doc.role = DocRole::readback;
  doc.data_file_link.file = q.str(0);
  doc.doc_id = q.str(1);
  if (auto ts = Timestamp::parse(q.str(2))) doc.timestamp = *ts;
  if (auto ts = Timestamp::parse(q.str(3))) doc.data_file_link.timestamp = *ts;
  doc.comments = q.str(4);
  doc.operator_id = q.opt_i64(5);
  doc.aggregates.resize(static_cast<std::size_t>(q.i64(6)));
  doc.kind = q.str(7) == "Processing" ? ToolKind::Processing : ToolKind::Characterization;
  doc.measurement_type = NamedRef{q.opt_i64(11), q.str(8)};
  doc.tool = NamedRef{q.opt_i64(10), q.str(9)};

  auto grow = [&](int index) -> Aggregate& {
    auto i = static_cast<std::size_t>(index);
    if (i >= doc.aggregates.size()) doc.aggregates.resize(i + 1);
    return doc.aggregates[i];
  };
  for (auto& [index, m] : metadata(file_id)) grow(index).metadata.push_back(std::move(m));
  for (auto& a : arrays(file_id)) {
    DataSeries s;
    s.descriptor.name = a.descriptors.empty() ? "" : a.descriptors[0];
    s.descriptor.units = a.descriptors.size() > 1 ? a.descriptors[1] : "";
    s.data = std::move(a.lexemes);
    grow(a.aggregate_index).series.push_back(std::move(s));
  }
  return doc;
}

// ---- semantic model --------------------------------------------------------

std::vector<Id> Store::promote_semantic(Id file_id, const std::string& model_name, const SemanticMapping& mapping) {
  if (model_name != "jv_curve")
    throw StoreError(StoreError::Kind::InvalidData, "unknown semantic model '" + model_name + "'");
  return transact([&] {
    auto info = file(file_id);
    if (!info) throw StoreError(StoreError::Kind::NotFound, "file " + std::to_string(file_id) + " not found");
    auto ev = event(info->event_id);

    std::map<int, std::pair<const DataArray*, const DataArray*>> by_aggregate;
    auto all = arrays(file_id);
    for (const auto& a : all) {
      const auto& name = a.descriptors.at(0);
      if (name == mapping.x_descriptor) by_aggregate[a.aggregate_index].first = &a;
      if (name == mapping.y_descriptor) by_aggregate[a.aggregate_index].second = &a;
    }
    if (by_aggregate.empty())
      throw StoreError(StoreError::Kind::MissingDescriptor,
                       "file " + std::to_string(file_id) + " has no '" + mapping.x_descriptor + "' or '" +
                           mapping.y_descriptor + "' series");

    std::map<int, std::string> devices;
    for (const auto& [index, m] : metadata(file_id)) {
      if (m.name == mapping.device_meta_key && !devices.contains(index)) {
        devices[index] = m.value ? *m.value : m.comments.value_or("");
      }
    }

    Stmt(db_, "DELETE FROM jv_curves WHERE file_id = ?").args(file_id).run();
    Stmt curve(db_, "INSERT INTO jv_curves(file_id, sample_id, device_id, aggregate_index) VALUES (?, ?, ?, ?)");
    Stmt point(db_, "INSERT INTO jv_points(curve_id, position, voltage, current) VALUES (?, ?, ?, ?)");
    std::vector<Id> ids;
    for (const auto& [index, xy] : by_aggregate) {
      const auto* x = xy.first;
      const auto* y = xy.second;
      if (!x || !y)
        throw StoreError(StoreError::Kind::MissingDescriptor,
                         "aggregate " + std::to_string(index) + " lacks '" +
                             (x ? mapping.y_descriptor : mapping.x_descriptor) + "'");
      if (x->values.size() != y->values.size())
        throw StoreError(StoreError::Kind::UnequalLengths,
                         "aggregate " + std::to_string(index) + ": " + std::to_string(x->values.size()) + " x values, " +
                             std::to_string(y->values.size()) + " y values");
      if (x->values.empty())
        throw StoreError(StoreError::Kind::InvalidData, "aggregate " + std::to_string(index) + " has no points");
      auto device = devices.contains(index) ? devices[index] : std::to_string(index);
      curve.reset();
      curve.args(file_id, ev.sample_id, device, index).run();
      Id curve_id = sqlite3_last_insert_rowid(db_);
      for (std::size_t i = 0; i < x->values.size(); ++i) {
        if (!x->values[i] || !y->values[i])
          throw StoreError(StoreError::Kind::InvalidData,
                           "aggregate " + std::to_string(index) + " point " + std::to_string(i) + " is not numeric");
        point.reset();
        point.args(curve_id, static_cast<int>(i), *x->values[i], *y->values[i]).run();
      }
      ids.push_back(curve_id);
    }
    return ids;
  });
}

std::vector<JvCurve> Store::jv_curves(Id file_id) {
  std::lock_guard lock(mu_);
  std::vector<JvCurve> out;
  Stmt q(db_, "SELECT id, file_id, sample_id, device_id FROM jv_curves WHERE file_id = ? ORDER BY id");
  q.args(file_id);
  while (q.step()) out.push_back(JvCurve{q.i64(0), q.i64(1), q.opt_i64(2), q.str(3), {}});
  Stmt p(db_, "SELECT voltage, current FROM jv_points WHERE curve_id = ? ORDER BY position");
  for (auto& c : out) {
    p.reset();
    p.args(c.id);
    while (p.step()) c.points.push_back({p.dbl(0), p.dbl(1)});
  }
  return out;
}

// ---- search ----------------------------------------------------------------

std::vector<Id> Store::evaluate(const BooleanQuery& query, const Scope& scope) {
  std::vector<std::string> params;
  auto where = to_sql(query, params);
  std::string sql =
      "SELECT f.id FROM file_information f JOIN events e ON e.id = f.event_id JOIN tools t ON t.id = e.tool_id "
      "LEFT JOIN samples s ON s.id = e.sample_id LEFT JOIN projects p ON p.id = s.project_id WHERE " +
      where + " AND " + scope_clause(scope, "p.id") + " ORDER BY f.id";
  std::lock_guard lock(mu_);
  Stmt q(db_, sql);
  for (std::size_t i = 0; i < params.size(); ++i) q.bind(static_cast<int>(i + 1), params[i]);
  std::vector<Id> out;
  while (q.step()) out.push_back(q.i64(0));
  return out;
}

// ---- annotations -----------------------------------------------------------

std::optional<Id> Store::project_of(const AnnotationTarget& target) {
  std::lock_guard lock(mu_);
  const char* sql = nullptr;
  switch (target.kind) {
    case TargetKind::Project: sql = "SELECT id FROM projects WHERE id = ?"; break;
    case TargetKind::Sample: sql = "SELECT project_id FROM samples WHERE id = ?"; break;
    case TargetKind::Event:
      sql = "SELECT s.project_id FROM events e LEFT JOIN samples s ON s.id = e.sample_id WHERE e.id = ?";
      break;
    case TargetKind::File:
      sql =
          "SELECT s.project_id FROM file_information f JOIN events e ON e.id = f.event_id "
          "LEFT JOIN samples s ON s.id = e.sample_id WHERE f.id = ?";
      break;
  }
  Stmt q(db_, sql);
  if (!q.args(target.id).step())
    throw StoreError(StoreError::Kind::UnknownTarget,
                     std::string(to_string(target.kind)) + " " + std::to_string(target.id) + " does not exist");
  return q.opt_i64(0);
}

bool Store::target_exists(const AnnotationTarget& target) {
  try {
    project_of(target);
    return true;
  } catch (const StoreError& e) {
    if (e.kind() == StoreError::Kind::UnknownTarget) return false;
    throw;
  }
}

Id Store::annotate(const AnnotationTarget& target, const std::string& author, const std::string& text,
                   const std::vector<std::string>& links) {
  return transact([&] {
    project_of(target);  // throws UnknownTarget
    Stmt(db_,
         "INSERT INTO annotations(target_kind, target_id, author, text, links, created_at) VALUES (?, ?, ?, ?, ?, ?)")
        .args(to_string(target.kind), target.id, author, text, json(links).dump(), Clock::now())
        .run();
    return sqlite3_last_insert_rowid(db_);
  });
}

std::vector<Annotation> Store::list_annotations(const AnnotationTarget& target) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT id, author, text, links, created_at FROM annotations WHERE target_kind = ? AND target_id = ? "
         "ORDER BY id");
  q.args(to_string(target.kind), target.id);
  std::vector<Annotation> out;
  while (q.step()) {
    out.push_back(Annotation{q.i64(0), target, q.str(1), q.str(2),
                             json::parse(q.str(3)).get<std::vector<std::string>>(), q.time(4)});
  }
  return out;
}

// ---- transaction log -------------------------------------------------------

Id Store::log_insert(HarvestLogEntry e) {
  return transact([&] {
    auto now = Clock::now();
    Stmt(db_,
         "INSERT INTO harvest_log(instrument_name, source_host, source_path, size, mtime, detected_at, status, "
         "progress, version, attempts, updated_at) VALUES (?, ?, ?, ?, ?, ?, 'Detected', 0, ?, 0, ?)")
        .args(e.instrument_name, e.source_host, e.source_path, e.size, e.mtime, e.detected_at, e.version, now)
        .run();
    return sqlite3_last_insert_rowid(db_);
  });
}

HarvestLogEntry Store::log_update(Id entry_id, LogStatus status, const LogUpdate& u) {
  return transact([&] {
    auto current = log_entry(entry_id);
    if (!current) throw StoreError(StoreError::Kind::NotFound, "log entry " + std::to_string(entry_id) + " not found");
    auto e = *current;
    auto at = u.at.value_or(Clock::now());
    if (status == LogStatus::Failed) {
      if (e.status == LogStatus::Extracted) return e;  // nothing left to fail
      e.status = LogStatus::Failed;
      e.attempts += 1;
      e.error_detail = u.error_detail.value_or("unknown error");
    } else {
      int r = rank(status);
      if (r >= e.progress) {
        e.status = status;
        e.progress = r;
        e.error_detail.reset();
      }
      switch (status) {
        case LogStatus::Notified: e.notified_at = at; break;
        case LogStatus::Harvested:
          e.harvested_at = at;
          if (u.archive_path) e.archive_path = u.archive_path;
          break;
        case LogStatus::Extracted:
          e.extracted_at = at;
          if (u.archive_path && !e.archive_path) e.archive_path = u.archive_path;
          break;
        default: break;
      }
    }
    e.updated_at = Clock::now();
    Stmt(db_,
         "UPDATE harvest_log SET notified_at = ?, harvested_at = ?, archive_path = ?, extracted_at = ?, status = ?, "
         "progress = ?, error_detail = ?, attempts = ?, updated_at = ? WHERE id = ?")
        .args(e.notified_at, e.harvested_at, e.archive_path, e.extracted_at, to_string(e.status), e.progress,
              e.error_detail, e.attempts, e.updated_at, entry_id)
        .run();
    return e;
  });
}

std::optional<HarvestLogEntry> Store::log_entry(Id entry_id) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns + " FROM harvest_log WHERE id = ?");
  if (!q.args(entry_id).step()) return std::nullopt;
  return read_log(q);
}

std::optional<HarvestLogEntry> Store::log_latest(std::string_view instrument, std::string_view source_path) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns +
                  " FROM harvest_log WHERE instrument_name = ? AND source_path = ? ORDER BY version DESC LIMIT 1");
  if (!q.args(instrument, source_path).step()) return std::nullopt;
  return read_log(q);
}

std::optional<HarvestLogEntry> Store::log_latest_by_source(std::string_view host, std::string_view source_path) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns +
                  " FROM harvest_log WHERE source_host = ? AND source_path = ? ORDER BY version DESC, id DESC LIMIT 1");
  if (!q.args(host, source_path).step()) return std::nullopt;
  return read_log(q);
}

std::optional<HarvestLogEntry> Store::log_latest_by_archive_path(std::string_view archive_path) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns +
                  " FROM harvest_log WHERE archive_path = ? ORDER BY version DESC, id DESC LIMIT 1");
  if (!q.args(archive_path).step()) return std::nullopt;
  return read_log(q);
}

std::optional<std::string> Store::log_archive_path_for_source(std::string_view host, std::string_view source_path) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT archive_path FROM harvest_log WHERE source_host = ? AND source_path = ? AND archive_path IS NOT NULL "
         "ORDER BY version DESC, id DESC LIMIT 1");
  if (!q.args(host, source_path).step()) return std::nullopt;
  return q.str(0);
}

std::vector<HarvestLogEntry> Store::log_latest_all(std::string_view instrument) {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns +
                  " FROM harvest_log h WHERE instrument_name = ? AND version = "
                  "(SELECT MAX(version) FROM harvest_log x WHERE x.instrument_name = h.instrument_name "
                  "AND x.source_path = h.source_path) ORDER BY source_path");
  q.args(instrument);
  std::vector<HarvestLogEntry> out;
  while (q.step()) out.push_back(read_log(q));
  return out;
}

std::vector<HarvestLogEntry> Store::log_all() {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string("SELECT ") + kLogColumns + " FROM harvest_log ORDER BY id");
  std::vector<HarvestLogEntry> out;
  while (q.step()) out.push_back(read_log(q));
  return out;
}

// ---- receipts --------------------------------------------------------------

Id Store::add_receipt(ExtractionReceipt r) {
  return transact([&] {
    Stmt(db_,
         "INSERT INTO extraction_receipts(file_id, version, tool_name, sample_code, project, project_id, archive_path, "
         "extracted_at, array_count, semantic_count, skipped_rows) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)")
        .args(r.file_id, r.version, r.tool_name, r.sample_code, r.project, r.project_id, r.archive_path,
              r.extracted_at, static_cast<std::int64_t>(r.array_count), static_cast<std::int64_t>(r.semantic_count),
              static_cast<std::int64_t>(r.skipped_rows))
        .run();
    return sqlite3_last_insert_rowid(db_);
  });
}

std::vector<ExtractionReceipt> Store::receipts_after(Id seq, std::size_t limit) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT seq, file_id, version, tool_name, sample_code, project, project_id, archive_path, extracted_at, "
         "array_count, semantic_count, skipped_rows FROM extraction_receipts WHERE seq > ? ORDER BY seq LIMIT ?");
  q.args(seq, static_cast<std::int64_t>(limit));
  std::vector<ExtractionReceipt> out;
  while (q.step()) {
    ExtractionReceipt r;
    r.seq = q.i64(0);
    r.file_id = q.i64(1);
    r.version = static_cast<int>(q.i64(2));
    r.tool_name = q.str(3);
    r.sample_code = q.opt_str(4);
    r.project = q.opt_str(5);
    r.project_id = q.opt_i64(6);
    r.archive_path = q.str(7);
    r.extracted_at = q.time(8);
    r.array_count = static_cast<std::size_t>(q.i64(9));
    r.semantic_count = static_cast<std::size_t>(q.i64(10));
    r.skipped_rows = static_cast<std::size_t>(q.i64(11));
    out.push_back(std::move(r));
  }
  return out;
}

Id Store::last_receipt_seq() {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT COALESCE(MAX(seq), 0) FROM extraction_receipts");
  q.step();
  return q.i64(0);
}

// ---- listings --------------------------------------------------------------

std::vector<ToolRow> Store::tools() {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT id, name, kind, external_id FROM tools ORDER BY name");
  std::vector<ToolRow> out;
  while (q.step())
    out.push_back({q.i64(0), q.str(1), parse_tool_kind(q.str(2)).value_or(ToolKind::Characterization), q.opt_i64(3)});
  return out;
}

std::vector<ProjectRow> Store::projects() {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT id, name FROM projects ORDER BY name");
  std::vector<ProjectRow> out;
  while (q.step()) out.push_back({q.i64(0), q.str(1)});
  return out;
}

std::vector<SampleRow> Store::samples(const Scope& scope) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT s.id, s.sample_code, s.project_id, p.name FROM samples s LEFT JOIN projects p ON p.id = s.project_id "
         "WHERE " +
             scope_clause(scope, "s.project_id") + " ORDER BY s.sample_code");
  std::vector<SampleRow> out;
  while (q.step()) out.push_back({q.i64(0), q.str(1), q.opt_i64(2), q.opt_str(3)});
  return out;
}

std::vector<FileSummary> Store::file_summaries(const std::vector<Id>& ids) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT f.id, t.name, s.sample_code, p.name, p.id, f.file_timestamp, f.archive_path, f.original_path, "
         "f.version, f.size FROM file_information f JOIN events e ON e.id = f.event_id "
         "JOIN tools t ON t.id = e.tool_id LEFT JOIN samples s ON s.id = e.sample_id "
         "LEFT JOIN projects p ON p.id = s.project_id WHERE f.id = ?");
  std::vector<FileSummary> out;
  for (Id id : ids) {
    q.reset();
    if (!q.args(id).step()) continue;
    FileSummary f;
    f.file_id = q.i64(0);
    f.tool_name = q.str(1);
    f.sample_code = q.opt_str(2);
    f.project = q.opt_str(3);
    f.project_id = q.opt_i64(4);
    f.file_timestamp = q.time(5);
    f.archive_path = q.str(6);
    f.original_path = q.str(7);
    f.version = static_cast<int>(q.i64(8));
    f.size = static_cast<std::uint64_t>(q.i64(9));
    out.push_back(std::move(f));
  }
  return out;
}

std::optional<Id> Store::project_id(std::string_view name) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT id FROM projects WHERE name = ?");
  if (!q.args(name).step()) return std::nullopt;
  return q.i64(0);
}

void Store::grant(const std::string& username, const std::string& project) {
  transact([&] {
    Stmt(db_, "INSERT OR IGNORE INTO projects(name) VALUES (?)").args(project).run();
    Stmt(db_, "INSERT OR IGNORE INTO user_grants(username, project_id) SELECT ?, id FROM projects WHERE name = ?")
        .args(username, project)
        .run();
  });
}

std::vector<Id> Store::scope_for(std::string_view username) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT project_id FROM user_grants WHERE username = ? ORDER BY project_id");
  q.args(username);
  std::vector<Id> out;
  while (q.step()) out.push_back(q.i64(0));
  return out;
}

// ---- diagnostics -----------------------------------------------------------

std::int64_t Store::count(std::string_view table) {
  if (table.empty() || !std::all_of(table.begin(), table.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }))
    throw StoreError(StoreError::Kind::InvalidData, "bad table name");
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT COUNT(*) FROM " + std::string(table));
  q.step();
  return q.i64(0);
}

std::int64_t Store::integrity_violations() {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT "
         "(SELECT COUNT(*) FROM data_arrays d WHERE NOT EXISTS (SELECT 1 FROM file_information f WHERE f.id = d.file_id))"
         " + (SELECT COUNT(*) FROM file_metadata m WHERE NOT EXISTS "
         "(SELECT 1 FROM file_information f WHERE f.id = m.file_id))"
         " + (SELECT COUNT(*) FROM file_information f WHERE NOT EXISTS (SELECT 1 FROM events e WHERE e.id = f.event_id))"
         " + (SELECT COUNT(*) FROM jv_curves c WHERE NOT EXISTS (SELECT 1 FROM file_information f WHERE f.id = c.file_id))"
         " + (SELECT COUNT(*) FROM jv_points p WHERE NOT EXISTS (SELECT 1 FROM jv_curves c WHERE c.id = p.curve_id))"
         " + (SELECT COUNT(*) FROM events e WHERE NOT EXISTS (SELECT 1 FROM measurement_events m WHERE m.event_id = e.id)"
         " AND NOT EXISTS (SELECT 1 FROM processing_events p WHERE p.event_id = e.id))");
  q.step();
  return q.i64(0);
}

}  // namespace lims
