#pragma once

// The harvester: accepts transfer/update announcements, copies source files
// into the tool/date archive under a bandwidth budget, writes the secondary
// backup and hands each archived file to an attached extractor.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "lims/codec.hpp"
#include "lims/config.hpp"
#include "lims/store.hpp"
#include "lims/transport.hpp"

namespace lims {

class HarvestError : public Error {
 public:
  enum class Kind { CopyFailed, VerifyFailed, Unavailable };

  HarvestError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Lowercase, every non-alphanumeric byte replaced by '_'.
std::string tool_slug(std::string_view tool_name);

/// Returns the content hash of an archive-relative path, or nullopt if absent.
using ArchiveView = std::function<std::optional<std::string>(const std::string& relative)>;

/// `<slug>/data/<YYYYMMDD>/<file_name>`; when that path holds different
/// content, the first `.v<k>` (k >= 2) that is free or already holds
/// `content_hash`.
std::string archive_path(std::string_view tool_name, std::string_view file_name, std::string_view yyyymmdd,
                         const ArchiveView& existing, const std::string& content_hash);

/// Calendar date for archive placement: the source mtime, or the harvest
/// time when the mtime is before 1990 or in the future.
std::string archive_date(TimePoint mtime, TimePoint now = Clock::now());

/// Token bucket over bytes. rate 0 disables throttling.
class TokenBucket {
 public:
  using Steady = std::chrono::steady_clock;

  TokenBucket(double rate_bytes_per_sec, double capacity);
  double rate() const { return rate_; }
  double capacity() const { return capacity_; }
  bool unlimited() const { return rate_ <= 0; }
  double available();
  /// Blocks until `n` tokens (n <= capacity) are available and takes them.
  /// Returns false if `cancel` becomes true while waiting.
  bool acquire(double n, const std::atomic<bool>& cancel);
  /// Test hook: overwrite the current level.
  void set_level(double tokens);

 private:
  void refill();

  std::mutex mu_;
  double rate_;
  double capacity_;
  double tokens_;
  Steady::time_point last_;
};

/// Bytes moved over time, for throughput checks.
class TransferMeter {
 public:
  void record(std::uint64_t bytes);
  /// Highest total over any window of the given length.
  std::uint64_t max_window_bytes(std::chrono::milliseconds window) const;
  std::uint64_t total() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<std::chrono::steady_clock::time_point, std::uint64_t>> samples_;
};

struct TransferTask {
  OpsMessage ops;  // role transfer | update
  int priority = 0;
  TimePoint enqueued_at;
  std::uint64_t size = 0;
  int attempts = 0;
  std::uint64_t seq = 0;
  std::filesystem::path source_file;  // resolved local path
  TimePoint not_before;               // retry backoff
  bool unknown_tool = false;

  const std::string& host() const { return ops.target->source_host; }
  const std::string& path() const { return ops.target->source_path; }
};

/// Priority queue with coalescing and per-source exclusion.
class TaskQueue {
 public:
  /// False when an equivalent task is already queued or executing.
  bool push(TransferTask task);
  /// Highest priority, then earliest enqueued_at, among tasks that are due,
  /// whose source is not being copied, and whose admission cost
  /// min(size, capacity) fits `tokens`. The task is marked executing.
  std::optional<TransferTask> next(double tokens, double capacity, TimePoint now);
  void done(const TransferTask& task);
  std::size_t queued() const;
  std::size_t executing() const;

 private:
  mutable std::mutex mu_;
  std::list<TransferTask> tasks_;
  std::set<std::pair<std::string, std::string>> busy_;  // (host, path) being copied
  std::set<std::tuple<std::string, std::string, OpsRole>> running_;
  std::uint64_t next_seq_ = 0;
};

struct HarvestOutcome {
  std::string archive_path;
  std::string content_hash;
  std::uint64_t size = 0;
  TimePoint mtime;
  bool copied = false;   // new bytes landed in the archive
  bool swapped = false;  // an older version moved aside to `.v<k>`
  std::optional<std::string> retained_as;
};

class Harvester {
 public:
  Harvester(const Config& config, Store& store);
  ~Harvester();
  Harvester(const Harvester&) = delete;
  Harvester& operator=(const Harvester&) = delete;

  /// Binds both ports (0 in config = ephemeral) and starts the workers.
  void start();
  void stop();
  std::uint16_t port() const;
  std::uint16_t extractor_port() const;

  /// Server entry point for every ops message.
  net::Reply handle(const OpsMessage& msg);
  OpsMessage enqueue(const OpsMessage& msg);
  /// Copies one task's source into the archive and backup. Throws HarvestError.
  HarvestOutcome execute_transfer(const TransferTask& task);
  /// Builds a task (resolving the source through the mounts) without queueing it.
  TransferTask make_task(const OpsMessage& msg);

  /// Sends a request to an attached extractor, waiting up to `wait` for one.
  net::Reply call_extractor(const OpsMessage& msg, bool expect_attachment, std::chrono::milliseconds wait);
  std::size_t attached_extractors() const;

  TaskQueue& queue() { return queue_; }
  TokenBucket& bucket() { return bucket_; }
  TransferMeter& meter() { return meter_; }
  const BackupCodec& codec() const { return *codec_; }
  /// True when nothing is queued or executing.
  bool idle() const;

 private:
  void worker_loop();
  void run_task(TransferTask task);
  void accept_extractors();
  std::optional<std::string> hash_of(const std::string& relative) const;
  void write_backup(const std::string& relative);
  std::filesystem::path staging_file();

  const Config& config_;
  Store& store_;
  std::unique_ptr<BackupCodec> codec_;
  TokenBucket bucket_;
  TransferMeter meter_;
  TaskQueue queue_;

  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};  // cancels throttled copies
  std::vector<std::thread> workers_;
  std::unique_ptr<net::Server> server_;
  std::unique_ptr<net::Listener> extractor_listener_;
  std::thread extractor_acceptor_;

  mutable std::mutex channels_mu_;
  std::condition_variable channels_cv_;
  std::deque<std::unique_ptr<net::Connection>> idle_channels_;
  std::set<net::Connection*> busy_channels_;
  std::atomic<std::uint64_t> staging_counter_{0};
  std::mutex archive_mu_;  // serializes placement decisions
};

}  // namespace lims
