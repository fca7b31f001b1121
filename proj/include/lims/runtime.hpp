#pragma once

// Process wiring for `lims run`: which daemons to start in this process and
// how they find each other. `all` runs everything over loopback TCP.

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "lims/config.hpp"
#include "lims/transport.hpp"

namespace lims {

class Store;
class Harvester;
class Extractor;
class Monitor;
class Service;
class TapHub;
class ReceiptPoller;

enum class RunMode { monitor, harvest, extract, serve, all };

std::optional<RunMode> parse_run_mode(std::string_view text);
std::string_view to_string(RunMode mode);

class Runtime {
 public:
  Runtime(const Config& config, RunMode mode);
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  /// Starts the daemons for the mode. In `all` and `extract` mode this waits
  /// (up to `attach_wait`) for extractor channels to reach the harvester.
  void start(std::chrono::milliseconds attach_wait = std::chrono::seconds(5));
  /// Stops in reverse order: monitor, service, extractor, harvester.
  void stop();

  /// One line naming what is listening, e.g.
  /// "READY mode=all harvester=127.0.0.1:5801 extractors=127.0.0.1:5802/2 service=127.0.0.1:8080"
  std::string ready_line() const;
  /// Sends role=test to the harvester; true on ack.
  bool ping() const;

  /// Where the harvester listens (actual ports once started).
  net::Endpoint harvester_endpoint() const;
  net::Endpoint extractor_endpoint() const;

  Store& store() { return *store_; }
  Harvester* harvester() { return harvester_.get(); }
  Extractor* extractor() { return extractor_.get(); }
  Monitor* monitor() { return monitor_.get(); }
  Service* service() { return service_.get(); }
  TapHub* hub() { return hub_.get(); }

 private:
  bool runs(RunMode m) const { return mode_ == RunMode::all || mode_ == m; }

  const Config& config_;
  RunMode mode_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<Harvester> harvester_;
  std::unique_ptr<Extractor> extractor_;
  std::unique_ptr<Monitor> monitor_;
  std::unique_ptr<TapHub> hub_;
  std::unique_ptr<ReceiptPoller> poller_;
  std::unique_ptr<Service> service_;
  bool started_ = false;
};

/// Blocks SIGINT and SIGTERM in the calling thread (call before spawning
/// threads so they inherit the mask) and returns a waiter for them.
class ShutdownSignals {
 public:
  ShutdownSignals();
  /// Waits for SIGINT or SIGTERM and returns its number.
  int wait();
};

}  // namespace lims
