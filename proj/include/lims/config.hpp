#pragma once

// Unified JSON configuration: store, daemons, tools with their translation
// rules, instrument mounts, projects and service tokens. Unknown keys are
// rejected so typos fail at startup instead of being ignored.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "lims/format.hpp"

namespace lims {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class FileFormat { DelimitedColumns, HeaderPlusColumns, BinaryOpaque };
enum class AggregateRule { SingleAggregate, SplitOnBlankLine };

struct ColumnSpec {
  std::string name;
  std::string units;
};

struct HeaderRule {
  std::string key_pattern;
  std::regex key_regex;
  std::string metadata_name;
  std::string units = "-";
  bool as_comment = false;  // write the value into `comments` instead of `value`
};

/// Either "runs of whitespace" or one literal separator character.
struct Delimiter {
  bool whitespace = true;
  char ch = ' ';

  char canonical() const { return whitespace ? ' ' : ch; }
};

struct SemanticMapping {
  std::string x_descriptor;
  std::string y_descriptor;
  std::string device_meta_key;
};

struct StorageTarget {
  bool semantic = false;
  std::string model_name;  // e.g. "jv_curve"
};

struct TranslationConfig {
  std::string tool_name;
  ToolKind kind = ToolKind::Characterization;
  std::vector<std::string> match_patterns;
  FileFormat format = FileFormat::DelimitedColumns;
  Delimiter delimiter;
  int skip_lines = 0;
  std::vector<ColumnSpec> columns;
  std::vector<HeaderRule> header_rules;
  AggregateRule aggregate_rule = AggregateRule::SingleAggregate;
  StorageTarget storage_target;
  std::optional<SemanticMapping> semantic_mapping;
  int priority = 0;
  bool lenient = false;
  std::string measurement_type;  // procedure or recipe name; defaults to the tool name

  bool matches(std::string_view file_name) const;
};

struct InstrumentMount {
  std::string instrument_name;
  std::string host_label;
  std::filesystem::path root_path;
  std::vector<std::string> match_patterns;
  std::chrono::milliseconds poll_interval{5'000};
  ToolInfo tool;
  std::optional<std::string> sample_pattern;  // regex; group 1 (or whole match) is the sample code
  std::optional<std::string> operator_username;

  bool matches(const std::filesystem::path& relative) const;
  std::optional<std::string> sample_for(const std::filesystem::path& relative) const;
};

struct ProjectRule {
  std::string name;
  std::string sample_prefix;
};

struct HarvesterSettings {
  std::string host = "127.0.0.1";
  std::uint16_t port = 5801;
  std::uint16_t extractor_port = 5802;
  std::filesystem::path archive_root;
  std::filesystem::path backup_root;
  std::uint64_t rate_limit_bytes_per_sec = 0;  // 0 = unthrottled
  int workers = 4;
  bool encrypt = false;
  std::string encryption_key_hex;
  int max_attempts = 5;
  std::chrono::milliseconds backoff_initial{1'000};
  std::uint32_t max_frame_size = 64u << 20;
  std::chrono::milliseconds header_timeout{10'000};
  std::chrono::milliseconds body_timeout{30'000};
};

struct MonitorSettings {
  std::chrono::milliseconds staleness{120'000};
  std::chrono::milliseconds retry_initial{1'000};
  std::chrono::milliseconds retry_max{60'000};
  std::chrono::milliseconds reconcile_interval{30'000};
  bool require_stable_scans = true;
};

struct ExtractorSettings {
  int workers = 2;
};

struct UserGrant {
  std::string username;
  std::string project;
};

struct ServiceSettings {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  std::map<std::string, std::string> tokens;  // token -> username
  std::vector<UserGrant> grants;
  std::size_t tap_buffer = 256;
};

struct Config {
  std::filesystem::path source;  // file the config came from, if any
  std::filesystem::path store_path;
  HarvesterSettings harvester;
  MonitorSettings monitor;
  ExtractorSettings extractor;
  ServiceSettings service;
  std::vector<ProjectRule> projects;
  std::vector<TranslationConfig> tools;
  std::vector<InstrumentMount> mounts;
  std::vector<std::string> warnings;

  const TranslationConfig* find_tool(std::string_view name) const;
  std::optional<std::string> project_for_sample(std::string_view sample_code) const;
};

/// Throws ConfigError naming the offending key, or the line and column of a
/// syntax error. Relative paths resolve against `base_dir`.
Config parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
Config load_config(const std::filesystem::path& file);

}  // namespace lims
