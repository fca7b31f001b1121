#pragma once

// The translator: config-driven parsing of harvested files into the common
// data format, loading into the store, readback from the store and hard-copy
// regeneration. Receives work from the harvester over the ops protocol.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "lims/config.hpp"
#include "lims/format.hpp"
#include "lims/store.hpp"
#include "lims/transport.hpp"

namespace lims {

class TranslateError : public Error {
 public:
  enum class Kind { ParseError, UnsupportedFormat, UnequalLengths };

  TranslateError(Kind kind, std::size_t line, const std::string& detail);
  Kind kind() const { return kind_; }
  /// 1-based source line for ParseError, else 0.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

struct TranslationContext {
  ToolInfo tool;
  std::optional<std::int64_t> operator_id;
  std::string archive_path;  // becomes DataFileLink.file
  std::string file_name;
  std::uint64_t size = 0;
  TimePoint mtime;
  Timestamp timestamp = Timestamp::now();
};

struct Translation {
  DataDocument doc;
  std::size_t skipped_rows = 0;  // lenient mode only
};

Translation translate(std::string_view bytes, const TranslationConfig& cfg, const TranslationContext& ctx);

/// Data rows of every aggregate joined with the canonical delimiter, one
/// blank line between aggregates. Throws UnsupportedFormat / UnequalLengths.
std::string regenerate(const DataDocument& doc, const TranslationConfig& cfg);

struct StorageReceipt {
  Id file_id = 0;
  int version = 1;
  std::vector<Id> array_ids;
  std::vector<Id> semantic_ids;
  TimePoint extracted_at;
  std::size_t skipped_rows = 0;
  bool unchanged = false;  // same content already stored; nothing written
};

/// Who and what a stored file is about, beyond the document itself.
struct ExtractContext {
  std::optional<std::string> sample_code;
  std::optional<std::string> operator_username;
  std::string original_path;
  TimePoint file_timestamp;
  std::uint64_t size = 0;
  std::string content_hash;
  std::size_t skipped_rows = 0;
};

class Extractor {
 public:
  Extractor(const Config& config, Store& store);
  ~Extractor();
  Extractor(const Extractor&) = delete;
  Extractor& operator=(const Extractor&) = delete;

  /// Dispatches on the message role; never throws.
  net::Reply handle(const OpsMessage& msg);

  /// Translates and stores one archived file (relative to archive_root).
  StorageReceipt ingest(const std::string& archive_path, const OpsTarget& target, bool update);
  /// Stores a translated document in one transaction.
  StorageReceipt extract(const DataDocument& doc, const TranslationConfig& cfg, const ExtractContext& ctx,
                         bool update = false);
  DataDocument readback(Id file_id);

  /// Called after each committed extraction (not for unchanged content).
  void on_receipt(std::function<void(const ExtractionReceipt&)> hook);

  /// Keeps `connections` channels open to the harvester's extractor port,
  /// reconnecting as needed, and serves the requests sent over them.
  void attach(const net::Endpoint& harvester, int connections);
  void stop();

 private:
  std::shared_ptr<std::mutex> path_lock(const std::string& archive_path);
  void channel_loop(net::Endpoint harvester);

  const Config& config_;
  Store& store_;
  std::function<void(const ExtractionReceipt&)> hook_;
  std::mutex locks_mu_;
  std::map<std::string, std::weak_ptr<std::mutex>> locks_;

  std::atomic<bool> stopping_{false};
  std::mutex channels_mu_;
  std::vector<net::Connection*> live_;
  std::vector<std::thread> threads_;
};

/// Attribute names carried in Target extras between harvester and extractor.
inline constexpr const char* kOriginHostAttr = "originHost";
inline constexpr const char* kOriginPathAttr = "originPath";
inline constexpr const char* kFileIdAttr = "fileId";

std::optional<std::string> extra_attribute(const OpsTarget& target, std::string_view name);
void set_extra_attribute(OpsTarget& target, const std::string& name, const std::string& value);

}  // namespace lims
