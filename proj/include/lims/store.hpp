#pragma once

// Relational store on SQLite. Holds the metadata entities (projects, samples,
// tools, operators, procedures), measurement/processing events as a base table
// plus per-kind extension tables, the generic array model, the JV semantic
// model, annotations, the harvest transaction log and extraction receipts.
//
// One Store is one connection. Calls on the same Store are serialized; several
// processes may open the same file (WAL mode, busy timeout).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lims/config.hpp"
#include "lims/format.hpp"
#include "lims/query.hpp"

struct sqlite3;

namespace lims {

class StoreError : public Error {
 public:
  enum class Kind { ConstraintViolation, NotFound, MissingDescriptor, UnequalLengths, InvalidData, UnknownTarget, Io };

  StoreError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using Id = std::int64_t;

struct ResolvedIds {
  Id tool_id = 0;
  std::optional<Id> sample_id;
  std::optional<Id> project_id;
  std::optional<Id> operator_id;
};

enum class EventKind { Measurement, Processing };

struct EventRecord {
  Id id = 0;
  EventKind kind = EventKind::Measurement;
  Id tool_id = 0;
  std::optional<Id> operator_id;
  std::optional<Id> sample_id;
  TimePoint occurred_at;
  std::string procedure_name;
};

struct FileInformation {
  Id id = 0;
  Id event_id = 0;
  std::string archive_path;
  std::string original_path;
  TimePoint file_timestamp;
  std::uint64_t size = 0;
  int version = 1;
  std::string content_hash;
  std::optional<TimePoint> extracted_at;
};

struct DataArray {
  Id id = 0;
  Id file_id = 0;
  int aggregate_index = 0;
  int position = 0;
  std::vector<std::string> descriptors;  // [name, units]
  std::vector<std::optional<double>> values;
  std::vector<std::string> lexemes;  // authoritative text
};

struct InsertResult {
  Id file_id = 0;
  std::vector<Id> array_ids;
};

struct JvPoint {
  double voltage = 0;
  double current = 0;
  friend bool operator==(const JvPoint&, const JvPoint&) = default;
};

struct JvCurve {
  Id id = 0;
  Id file_id = 0;
  std::optional<Id> sample_id;
  std::string device_id;
  std::vector<JvPoint> points;
};

enum class TargetKind { Sample, File, Event, Project };

std::string_view to_string(TargetKind k);
std::optional<TargetKind> parse_target_kind(std::string_view s);

struct AnnotationTarget {
  TargetKind kind = TargetKind::File;
  Id id = 0;
  friend bool operator==(const AnnotationTarget&, const AnnotationTarget&) = default;
};

struct Annotation {
  Id id = 0;
  AnnotationTarget target;
  std::string author;
  std::string text;
  std::vector<std::string> links;
  TimePoint created_at;
};

// ---- transaction log -------------------------------------------------------

enum class LogStatus { Detected, Notified, Harvested, Extracted, Failed };

std::string_view to_string(LogStatus s);

struct HarvestLogEntry {
  Id entry_id = 0;
  std::string instrument_name;
  std::string source_host;
  std::string source_path;  // relative to the mount root
  std::uint64_t size = 0;
  TimePoint mtime;
  TimePoint detected_at;
  std::optional<TimePoint> notified_at;
  std::optional<TimePoint> harvested_at;
  std::optional<std::string> archive_path;
  std::optional<TimePoint> extracted_at;
  LogStatus status = LogStatus::Detected;
  std::optional<std::string> error_detail;
  int version = 1;
  int attempts = 0;
  int progress = 0;  // furthest lifecycle step reached: 0 Detected .. 3 Extracted
  TimePoint updated_at;
};

/// Optional fields carried by a status transition.
struct LogUpdate {
  std::optional<std::string> error_detail;
  std::optional<std::string> archive_path;
  std::optional<TimePoint> at;  // defaults to now
};

// ---- receipts, listings ----------------------------------------------------

struct ExtractionReceipt {
  Id seq = 0;
  Id file_id = 0;
  int version = 1;
  std::string tool_name;
  std::optional<std::string> sample_code;
  std::optional<std::string> project;
  std::optional<Id> project_id;
  std::string archive_path;
  TimePoint extracted_at;
  std::size_t array_count = 0;
  std::size_t semantic_count = 0;
  std::size_t skipped_rows = 0;
};

struct ToolRow {
  Id id = 0;
  std::string name;
  ToolKind kind = ToolKind::Characterization;
  std::optional<Id> external_id;
};

struct ProjectRow {
  Id id = 0;
  std::string name;
};

struct SampleRow {
  Id id = 0;
  std::string sample_code;
  std::optional<Id> project_id;
  std::optional<std::string> project;
};

struct FileSummary {
  Id file_id = 0;
  std::string tool_name;
  std::optional<std::string> sample_code;
  std::optional<std::string> project;
  std::optional<Id> project_id;
  TimePoint file_timestamp;
  std::string archive_path;
  std::string original_path;
  int version = 1;
  std::uint64_t size = 0;
};

/// Project ids a caller may see; nullopt means unrestricted.
using Scope = std::optional<std::vector<Id>>;

class Store {
 public:
  explicit Store(const std::filesystem::path& path);  // ":memory:" for a private in-memory store
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Runs `fn` in one transaction (a savepoint when nested); rolls back if it throws.
  template <class Fn>
  auto transact(Fn&& fn) -> decltype(fn()) {
    std::lock_guard lock(mu_);
    begin();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        commit();
      } else {
        auto r = fn();
        commit();
        return r;
      }
    } catch (...) {
      rollback();
      throw;
    }
  }

  /// Test hook invoked at named points inside multi-row writes.
  void set_fault_hook(std::function<void(std::string_view)> hook);

  // entities
  ResolvedIds register_entities(const ToolInfo& tool, const std::optional<std::string>& sample_code,
                                const std::optional<std::string>& project,
                                const std::optional<std::string>& operator_username);
  Id create_event(EventRecord ev, std::optional<Id> external_type_id = std::nullopt);
  EventRecord event(Id id);

  // generic model
  InsertResult insert_file_with_arrays(const DataDocument& doc, const FileInformation& info);
  /// Replaces metadata, arrays and semantic rows of an existing file and
  /// rewrites its information row (the caller bumps the version).
  InsertResult replace_file(Id file_id, const DataDocument& doc, const FileInformation& info);
  std::optional<FileInformation> file(Id id);
  std::optional<FileInformation> file_by_archive_path(std::string_view archive_path);
  std::vector<DataArray> arrays(Id file_id);
  std::vector<std::pair<int, MetaDatum>> metadata(Id file_id);
  /// Rebuilds the common-format document from stored rows.
  DataDocument load_document(Id file_id);

  // semantic model
  std::vector<Id> promote_semantic(Id file_id, const std::string& model_name, const SemanticMapping& mapping);
  std::vector<JvCurve> jv_curves(Id file_id);

  // search
  std::vector<Id> evaluate(const BooleanQuery& query, const Scope& scope = std::nullopt);

  // annotations
  bool target_exists(const AnnotationTarget& target);
  /// Project a target belongs to, if any. Throws UnknownTarget.
  std::optional<Id> project_of(const AnnotationTarget& target);
  Id annotate(const AnnotationTarget& target, const std::string& author, const std::string& text,
              const std::vector<std::string>& links);
  std::vector<Annotation> list_annotations(const AnnotationTarget& target);

  // transaction log
  Id log_insert(HarvestLogEntry entry);
  /// Applies a status transition without ever regressing the lifecycle.
  HarvestLogEntry log_update(Id entry_id, LogStatus status, const LogUpdate& update = {});
  std::optional<HarvestLogEntry> log_entry(Id entry_id);
  std::optional<HarvestLogEntry> log_latest(std::string_view instrument, std::string_view source_path);
  std::optional<HarvestLogEntry> log_latest_by_source(std::string_view host, std::string_view source_path);
  std::optional<HarvestLogEntry> log_latest_by_archive_path(std::string_view archive_path);
  /// Most recent archive path recorded for a source, across versions.
  std::optional<std::string> log_archive_path_for_source(std::string_view host, std::string_view source_path);
  /// Latest version of every path logged for an instrument.
  std::vector<HarvestLogEntry> log_latest_all(std::string_view instrument);
  std::vector<HarvestLogEntry> log_all();

  // receipts
  Id add_receipt(ExtractionReceipt receipt);
  std::vector<ExtractionReceipt> receipts_after(Id seq, std::size_t limit = 1000);
  Id last_receipt_seq();

  // listings and access control
  std::vector<ToolRow> tools();
  std::vector<ProjectRow> projects();
  std::vector<SampleRow> samples(const Scope& scope = std::nullopt);
  std::vector<FileSummary> file_summaries(const std::vector<Id>& ids);
  std::optional<Id> project_id(std::string_view name);
  void grant(const std::string& username, const std::string& project);
  std::vector<Id> scope_for(std::string_view username);

  // diagnostics
  std::int64_t count(std::string_view table);
  /// Number of rows whose parent is missing; zero in a consistent store.
  std::int64_t integrity_violations();

 private:
  void begin();
  void commit();
  void rollback();
  void exec(const char* sql);
  void fault(std::string_view point);
  void migrate();
  std::vector<Id> write_contents(Id file_id, const DataDocument& doc);

  sqlite3* db_ = nullptr;
  std::recursive_mutex mu_;
  int depth_ = 0;
  std::function<void(std::string_view)> fault_hook_;
};

}  // namespace lims
