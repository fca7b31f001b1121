#pragma once

// Per-instrument polling of mounted shares. New files and size (or mtime)
// changes are announced to the harvester and tracked in the harvest log;
// reconciliation recovers anything missed while a component was down.

#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lims/config.hpp"
#include "lims/store.hpp"
#include "lims/transport.hpp"

namespace lims {

class MonitorError : public Error {
 public:
  enum class Kind { MountUnavailable };

  MonitorError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class FileEventKind { New, Updated };

struct FileEvent {
  FileEventKind kind = FileEventKind::New;
  std::string source_path;  // relative to the mount root, '/' separated
  std::uint64_t size = 0;
  TimePoint mtime;
  std::optional<std::uint64_t> previous_size;  // Updated only
  std::optional<Id> entry_id;                  // set when reconcile re-emits an existing log entry
};

struct MountFile {
  std::string path;
  std::uint64_t size = 0;
  TimePoint mtime;

  friend bool operator==(const MountFile&, const MountFile&) = default;
};

/// Matching regular files under the mount, path-lexicographic. Throws MountUnavailable.
std::vector<MountFile> list_mount(const InstrumentMount& mount);

/// Last listing per path; a file is announced only once two consecutive
/// scans agree on its size and mtime.
using StabilityState = std::map<std::string, MountFile>;

/// New for unlogged files, Updated when size or mtime differ from the
/// latest log entry. With `stability`, unsettled files are held back.
std::vector<FileEvent> scan(const InstrumentMount& mount, Store& log, StabilityState* stability = nullptr);

/// Missing, changed and stuck entries. Entries stuck before Extracted for
/// longer than `staleness` are re-emitted with their entry_id.
std::vector<FileEvent> reconcile(const InstrumentMount& mount, Store& log, std::chrono::milliseconds staleness,
                                 TimePoint now = Clock::now());

class Monitor {
 public:
  Monitor(const Config& config, Store& store, net::Endpoint harvester);
  ~Monitor();
  Monitor(const Monitor&) = delete;
  Monitor& operator=(const Monitor&) = delete;

  /// Scan with this monitor's stability state for the mount.
  std::vector<FileEvent> scan(const InstrumentMount& mount);
  /// Logs the event (or reuses its entry) and announces it. Failures are
  /// recorded and scheduled for retry; nothing is thrown.
  HarvestLogEntry notify(const FileEvent& event, const InstrumentMount& mount);
  /// One poll cycle: due retries, then scan and notify.
  void poll_once(const InstrumentMount& mount);
  /// Reconcile and notify everything it returns.
  void reconcile_once(const InstrumentMount& mount);

  void start();
  void stop();
  std::size_t pending_retries() const;

 private:
  struct Retry {
    Id entry_id;
    FileEvent event;
    int failures = 0;
    TimePoint due;
  };

  HarvestLogEntry announce(const HarvestLogEntry& entry, const FileEvent& event, const InstrumentMount& mount);
  void run_retries(const InstrumentMount& mount);
  void mount_loop(const InstrumentMount& mount);

  const Config& config_;
  Store& store_;
  net::Endpoint harvester_;
  net::Timeouts timeouts_;

  mutable std::mutex mu_;
  std::map<std::string, StabilityState> stability_;      // by instrument
  std::map<std::string, std::vector<Retry>> retries_;    // by instrument
  std::map<std::string, bool> offline_;

  std::atomic<bool> running_{false};
  std::condition_variable wake_;
  std::vector<std::thread> loops_;
};

}  // namespace lims
