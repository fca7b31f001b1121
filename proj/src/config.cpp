#include "lims/config.hpp"

#include <set>

#include "json.hpp"

namespace lims {

namespace {

using json = nlohmann::json;

// Walks one JSON object, remembering which keys were read so the rest can
// be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  ~Section() = default;

  std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required key '" + where(key) + "'");
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const auto& v = raw(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError("key '" + where(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return get<T>(key);
  }

  std::chrono::milliseconds millis(const std::string& key, std::chrono::milliseconds fallback) {
    auto v = get<long long>(key, fallback.count());
    if (v < 0) throw ConfigError("key '" + where(key) + "' must be >= 0");
    return std::chrono::milliseconds(v);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown key '" + where(k) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

ToolKind kind_of(const std::string& s, const std::string& where) {
  auto k = parse_tool_kind(s);
  if (!k) throw ConfigError("key '" + where + "' must be Characterization or Processing");
  return *k;
}

TranslationConfig parse_translation(const json& j, const std::string& path, const std::string& tool_name,
                                    ToolKind kind) {
  Section s(j, path);
  TranslationConfig cfg;
  cfg.tool_name = tool_name;
  cfg.kind = kind;
  cfg.match_patterns = s.get<std::vector<std::string>>("match_patterns");
  if (cfg.match_patterns.empty()) throw ConfigError("key '" + s.where("match_patterns") + "' must be nonempty");

  auto format = s.get<std::string>("format");
  if (format == "DelimitedColumns") {
    cfg.format = FileFormat::DelimitedColumns;
  } else if (format == "HeaderPlusColumns") {
    cfg.format = FileFormat::HeaderPlusColumns;
  } else if (format == "BinaryOpaque") {
    cfg.format = FileFormat::BinaryOpaque;
  } else {
    throw ConfigError("key '" + s.where("format") + "' must be DelimitedColumns, HeaderPlusColumns or BinaryOpaque");
  }

  auto delim = s.get<std::string>("delimiter", "whitespace");
  if (delim == "whitespace") {
    cfg.delimiter = {true, ' '};
  } else if (delim == "tab" || delim == "\t") {
    cfg.delimiter = {false, '\t'};
  } else if (delim.size() == 1) {
    cfg.delimiter = {false, delim[0]};
  } else {
    throw ConfigError("key '" + s.where("delimiter") + "' must be \"whitespace\", \"tab\" or a single character");
  }

  cfg.skip_lines = s.get<int>("skip_lines", 0);
  if (cfg.skip_lines < 0) throw ConfigError("key '" + s.where("skip_lines") + "' must be >= 0");

  if (s.has("columns")) {
    const auto& cols = s.raw("columns");
    if (!cols.is_array()) throw ConfigError("key '" + s.where("columns") + "' must be an array");
    for (std::size_t i = 0; i < cols.size(); ++i) {
      Section c(cols[i], s.where("columns") + "[" + std::to_string(i) + "]");
      cfg.columns.push_back({c.get<std::string>("name"), c.get<std::string>("units", "-")});
      c.finish();
    }
  }
  if (s.has("header_rules")) {
    const auto& rules = s.raw("header_rules");
    if (!rules.is_array()) throw ConfigError("key '" + s.where("header_rules") + "' must be an array");
    for (std::size_t i = 0; i < rules.size(); ++i) {
      Section r(rules[i], s.where("header_rules") + "[" + std::to_string(i) + "]");
      HeaderRule rule;
      rule.key_pattern = r.get<std::string>("key_pattern");
      try {
        rule.key_regex = std::regex(rule.key_pattern);
      } catch (const std::regex_error&) {
        throw ConfigError("key '" + r.where("key_pattern") + "' is not a valid regex");
      }
      rule.metadata_name = r.get<std::string>("metadata_name");
      rule.units = r.get<std::string>("units", "-");
      rule.as_comment = r.get<bool>("as_comment", false);
      r.finish();
      cfg.header_rules.push_back(std::move(rule));
    }
  }

  auto agg = s.get<std::string>("aggregate_rule", "SingleAggregate");
  if (agg == "SingleAggregate") {
    cfg.aggregate_rule = AggregateRule::SingleAggregate;
  } else if (agg == "SplitOnBlankLine") {
    cfg.aggregate_rule = AggregateRule::SplitOnBlankLine;
  } else {
    throw ConfigError("key '" + s.where("aggregate_rule") + "' must be SingleAggregate or SplitOnBlankLine");
  }

  auto target = s.get<std::string>("storage_target", "generic");
  if (target == "generic") {
    cfg.storage_target = {};
  } else if (target.rfind("semantic:", 0) == 0) {
    cfg.storage_target = {true, target.substr(9)};
    if (cfg.storage_target.model_name != "jv_curve")
      throw ConfigError("key '" + s.where("storage_target") + "': unknown semantic model '" +
                        cfg.storage_target.model_name + "'");
  } else {
    throw ConfigError("key '" + s.where("storage_target") + "' must be \"generic\" or \"semantic:<model>\"");
  }
  if (s.has("semantic_mapping")) {
    Section m(s.raw("semantic_mapping"), s.where("semantic_mapping"));
    cfg.semantic_mapping = SemanticMapping{m.get<std::string>("x_descriptor"), m.get<std::string>("y_descriptor"),
                                           m.get<std::string>("device_meta_key", "device")};
    m.finish();
  }
  if (cfg.storage_target.semantic && !cfg.semantic_mapping)
    throw ConfigError("missing required key '" + s.where("semantic_mapping") + "' for a semantic storage target");

  cfg.priority = s.get<int>("priority", 0);
  cfg.lenient = s.get<bool>("lenient", false);
  cfg.measurement_type = s.get<std::string>("measurement_type", tool_name);
  s.finish();

  bool tabular = cfg.format != FileFormat::BinaryOpaque;
  if (tabular && cfg.columns.empty())
    throw ConfigError("key '" + s.where("columns") + "' must be nonempty for " + format);
  if (!tabular && !cfg.columns.empty())
    throw ConfigError("key '" + s.where("columns") + "' must be empty for BinaryOpaque");
  return cfg;
}

}  // namespace

bool TranslationConfig::matches(std::string_view file_name) const {
  for (const auto& p : match_patterns)
    if (glob_match(p, file_name)) return true;
  return false;
}

bool InstrumentMount::matches(const std::filesystem::path& relative) const {
  auto name = relative.filename().string();
  auto rel = relative.generic_string();
  for (const auto& p : match_patterns) {
    bool has_dir = p.find('/') != std::string::npos;
    if (glob_match(p, has_dir ? rel : name)) return true;
  }
  return false;
}

std::optional<std::string> InstrumentMount::sample_for(const std::filesystem::path& relative) const {
  if (!sample_pattern) return std::nullopt;
  std::smatch m;
  auto name = relative.generic_string();
  if (!std::regex_search(name, m, std::regex(*sample_pattern))) return std::nullopt;
  return m.size() > 1 && m[1].matched ? m[1].str() : m[0].str();
}

const TranslationConfig* Config::find_tool(std::string_view name) const {
  for (const auto& t : tools)
    if (t.tool_name == name) return &t;
  return nullptr;
}

std::optional<std::string> Config::project_for_sample(std::string_view code) const {
  const ProjectRule* best = nullptr;
  for (const auto& p : projects) {
    if (code.substr(0, p.sample_prefix.size()) == p.sample_prefix &&
        (!best || p.sample_prefix.size() > best->sample_prefix.size()))
      best = &p;
  }
  if (!best) return std::nullopt;
  return best->name;
}

Config parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }

  Config cfg;
  Section s(root, "");
  cfg.store_path = resolve(base_dir, s.get<std::string>("store_path"));

  {
    Section h(s.raw("harvester"), "harvester");
    auto& hs = cfg.harvester;
    hs.host = h.get<std::string>("host", hs.host);
    hs.port = h.get<std::uint16_t>("port", hs.port);
    hs.extractor_port = h.get<std::uint16_t>("extractor_port", hs.extractor_port);
    hs.archive_root = resolve(base_dir, h.get<std::string>("archive_root"));
    hs.backup_root = resolve(base_dir, h.get<std::string>("backup_root"));
    hs.rate_limit_bytes_per_sec = h.get<std::uint64_t>("rate_limit_bytes_per_sec", 0);
    hs.workers = h.get<int>("workers", hs.workers);
    hs.encrypt = h.get<bool>("encrypt", false);
    hs.encryption_key_hex = h.get<std::string>("encryption_key_hex", "");
    hs.max_attempts = h.get<int>("max_attempts", hs.max_attempts);
    hs.backoff_initial = h.millis("backoff_initial_ms", hs.backoff_initial);
    hs.max_frame_size = h.get<std::uint32_t>("max_frame_size", hs.max_frame_size);
    hs.header_timeout = h.millis("header_timeout_ms", hs.header_timeout);
    hs.body_timeout = h.millis("body_timeout_ms", hs.body_timeout);
    h.finish();
    if (hs.workers < 1) throw ConfigError("key 'harvester.workers' must be >= 1");
    if (hs.max_attempts < 1) throw ConfigError("key 'harvester.max_attempts' must be >= 1");
    if (std::filesystem::weakly_canonical(hs.archive_root) == std::filesystem::weakly_canonical(hs.backup_root))
      throw ConfigError("key 'harvester.backup_root' must differ from archive_root");
    if (hs.encrypt && hs.encryption_key_hex.size() != 64)
      throw ConfigError("key 'harvester.encryption_key_hex' must be 64 hex digits when encrypt is true");
  }

  if (s.has("monitor")) {
    Section m(s.raw("monitor"), "monitor");
    auto& ms = cfg.monitor;
    ms.staleness = m.millis("staleness_ms", ms.staleness);
    ms.retry_initial = m.millis("retry_initial_ms", ms.retry_initial);
    ms.retry_max = m.millis("retry_max_ms", ms.retry_max);
    ms.reconcile_interval = m.millis("reconcile_interval_ms", ms.reconcile_interval);
    ms.require_stable_scans = m.get<bool>("require_stable_scans", true);
    m.finish();
  }

  if (s.has("extractor")) {
    Section e(s.raw("extractor"), "extractor");
    cfg.extractor.workers = e.get<int>("workers", cfg.extractor.workers);
    e.finish();
    if (cfg.extractor.workers < 1) throw ConfigError("key 'extractor.workers' must be >= 1");
  }

  if (s.has("service")) {
    Section v(s.raw("service"), "service");
    auto& ss = cfg.service;
    ss.host = v.get<std::string>("host", ss.host);
    ss.port = v.get<std::uint16_t>("port", ss.port);
    ss.tokens = v.get<std::map<std::string, std::string>>("tokens", {});
    ss.tap_buffer = v.get<std::size_t>("tap_buffer", ss.tap_buffer);
    if (v.has("grants")) {
      const auto& grants = v.raw("grants");
      if (!grants.is_array()) throw ConfigError("key 'service.grants' must be an array");
      for (std::size_t i = 0; i < grants.size(); ++i) {
        Section g(grants[i], "service.grants[" + std::to_string(i) + "]");
        ss.grants.push_back({g.get<std::string>("username"), g.get<std::string>("project")});
        g.finish();
      }
    }
    v.finish();
  }

  if (s.has("projects")) {
    const auto& projects = s.raw("projects");
    if (!projects.is_array()) throw ConfigError("key 'projects' must be an array");
    for (std::size_t i = 0; i < projects.size(); ++i) {
      Section p(projects[i], "projects[" + std::to_string(i) + "]");
      cfg.projects.push_back({p.get<std::string>("name"), p.get<std::string>("sample_prefix")});
      p.finish();
    }
  }

  if (s.has("tools")) {
    const auto& tools = s.raw("tools");
    if (!tools.is_array()) throw ConfigError("key 'tools' must be an array");
    for (std::size_t i = 0; i < tools.size(); ++i) {
      auto path = "tools[" + std::to_string(i) + "]";
      Section t(tools[i], path);
      auto name = t.get<std::string>("name");
      if (name.empty()) throw ConfigError("key '" + path + ".name' must be nonempty");
      auto kind = kind_of(t.get<std::string>("kind", "Characterization"), path + ".kind");
      if (cfg.find_tool(name)) throw ConfigError("duplicate tool name '" + name + "' at " + path);
      cfg.tools.push_back(parse_translation(t.raw("translation"), path + ".translation", name, kind));
      t.finish();
    }
  }

  if (s.has("mounts")) {
    const auto& mounts = s.raw("mounts");
    if (!mounts.is_array()) throw ConfigError("key 'mounts' must be an array");
    std::set<std::string> names, hosts;
    for (std::size_t i = 0; i < mounts.size(); ++i) {
      auto path = "mounts[" + std::to_string(i) + "]";
      Section m(mounts[i], path);
      InstrumentMount mount;
      mount.instrument_name = m.get<std::string>("instrument_name");
      mount.host_label = m.get<std::string>("host_label", mount.instrument_name);
      mount.root_path = resolve(base_dir, m.get<std::string>("root_path"));
      mount.match_patterns = m.get<std::vector<std::string>>("patterns");
      mount.poll_interval = m.millis("poll_interval_ms", mount.poll_interval);
      if (mount.poll_interval.count() <= 0) throw ConfigError("key '" + path + ".poll_interval_ms' must be > 0");
      mount.tool.name = m.get<std::string>("tool");
      if (const auto* t = cfg.find_tool(mount.tool.name)) {
        mount.tool.kind = t->kind;
      } else {
        cfg.warnings.push_back(path + ": tool '" + mount.tool.name + "' has no translation config");
      }
      if (m.has("tool_kind")) mount.tool.kind = kind_of(m.get<std::string>("tool_kind"), path + ".tool_kind");
      if (m.has("sample_pattern")) {
        mount.sample_pattern = m.get<std::string>("sample_pattern");
        try {
          std::regex probe(*mount.sample_pattern);
        } catch (const std::regex_error&) {
          throw ConfigError("key '" + path + ".sample_pattern' is not a valid regex");
        }
      }
      if (m.has("operator")) mount.operator_username = m.get<std::string>("operator");
      m.finish();
      if (!names.insert(mount.instrument_name).second)
        throw ConfigError("duplicate instrument_name '" + mount.instrument_name + "' at " + path);
      if (!hosts.insert(mount.host_label).second)
        throw ConfigError("duplicate host_label '" + mount.host_label + "' at " + path);
      std::error_code ec;
      if (!std::filesystem::is_directory(mount.root_path, ec))
        cfg.warnings.push_back(path + ": root_path " + mount.root_path.string() + " is not reachable yet");
      cfg.mounts.push_back(std::move(mount));
    }
  }
  s.finish();
  return cfg;
}

Config load_config(const std::filesystem::path& file) {
  std::string text;
  try {
    text = read_file(file);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + file.string());
  }
  auto cfg = parse_config(text, std::filesystem::absolute(file).parent_path());
  cfg.source = file;
  return cfg;
}

}  // namespace lims
