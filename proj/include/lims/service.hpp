#pragma once

// HTTP JSON API over the store: scoped browsing, Boolean search, series
// for viewers, annotations and the /tap event stream of extraction receipts.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lims/config.hpp"
#include "lims/store.hpp"

namespace httplib {
class Server;
}

namespace lims {

struct TapFilter {
  std::optional<std::string> tool;
  std::optional<std::string> project;
};

/// One subscriber's bounded queue. Overflow closes the subscription.
class TapSubscription {
 public:
  TapSubscription(TapFilter filter, std::vector<Id> scope, std::size_t capacity)
      : filter_(std::move(filter)), scope_(std::move(scope)), capacity_(capacity) {}

  /// Waits up to `timeout` for the next receipt. nullopt on timeout or once closed.
  std::optional<ExtractionReceipt> next(std::chrono::milliseconds timeout);
  bool closed() const;
  bool overflowed() const;
  void close();

 private:
  friend class TapHub;
  bool wants(const ExtractionReceipt& r) const;
  void offer(const ExtractionReceipt& r);

  TapFilter filter_;
  std::vector<Id> scope_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ExtractionReceipt> queue_;
  bool closed_ = false;
  bool overflowed_ = false;
};

/// Fans receipts out to subscribers, once per (file_id, version).
class TapHub {
 public:
  explicit TapHub(std::size_t buffer = 256) : buffer_(buffer) {}

  std::shared_ptr<TapSubscription> subscribe(TapFilter filter, std::vector<Id> scope);
  void publish(const ExtractionReceipt& receipt);
  std::size_t subscribers() const;
  void close_all();

 private:
  std::size_t buffer_;
  mutable std::mutex mu_;
  std::vector<std::weak_ptr<TapSubscription>> subs_;
  std::set<std::pair<Id, int>> seen_;
};

/// Publishes receipts committed by another process by polling the store.
class ReceiptPoller {
 public:
  ReceiptPoller(Store& store, TapHub& hub, std::chrono::milliseconds interval = std::chrono::milliseconds(50));
  ~ReceiptPoller();
  void start();
  void stop();

 private:
  Store& store_;
  TapHub& hub_;
  std::chrono::milliseconds interval_;
  Id last_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

/// A computed HTTP response, independent of the server library.
struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

nlohmann::json to_json(const FileSummary& s);
nlohmann::json to_json(const ExtractionReceipt& r);

class Service {
 public:
  Service(const Config& config, Store& store, TapHub& hub);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Seeds configured grants and starts listening (port 0 = ephemeral).
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

  /// Username for a bearer token, if known.
  std::optional<std::string> authenticate(std::string_view authorization_header) const;

  // Endpoint logic, callable without HTTP.
  ApiResponse tools(const std::string& user);
  ApiResponse projects(const std::string& user);
  ApiResponse samples(const std::string& user);
  ApiResponse files(const std::string& user, const std::optional<std::string>& tool,
                    const std::optional<std::string>& from, const std::optional<std::string>& to);
  ApiResponse series(const std::string& user, Id file_id, bool lexical);
  ApiResponse annotations(const std::string& user, Id file_id);
  ApiResponse search(const std::string& user, const std::string& body);
  ApiResponse post_annotation(const std::string& user, const std::string& body);
  /// 403 when the user may not see the requested project filter.
  std::optional<ApiResponse> check_tap(const std::string& user, const TapFilter& filter);

 private:
  std::vector<Id> scope(const std::string& user);
  /// 404/403 for a file the user may not read.
  std::optional<ApiResponse> guard_file(const std::string& user, Id file_id);

  const Config& config_;
  Store& store_;
  TapHub& hub_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::uint16_t port_ = 0;
};

}  // namespace lims
