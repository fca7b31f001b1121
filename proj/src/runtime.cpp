#include "lims/runtime.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <thread>

#include "lims/extractor.hpp"
#include "lims/harvester.hpp"
#include "lims/monitor.hpp"
#include "lims/service.hpp"
#include "lims/store.hpp"
#include "lims/timestamp.hpp"

namespace lims {

using namespace std::chrono_literals;

std::optional<RunMode> parse_run_mode(std::string_view text) {
  for (auto m : {RunMode::monitor, RunMode::harvest, RunMode::extract, RunMode::serve, RunMode::all})
    if (to_string(m) == text) return m;
  return std::nullopt;
}

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::monitor: return "monitor";
    case RunMode::harvest: return "harvest";
    case RunMode::extract: return "extract";
    case RunMode::serve: return "serve";
    case RunMode::all: return "all";
  }
  return "?";
}

Runtime::Runtime(const Config& config, RunMode mode) : config_(config), mode_(mode) {}

Runtime::~Runtime() { stop(); }

net::Endpoint Runtime::harvester_endpoint() const {
  return {config_.harvester.host, harvester_ ? harvester_->port() : config_.harvester.port, net::EndpointRole::client};
}

net::Endpoint Runtime::extractor_endpoint() const {
  return {config_.harvester.host, harvester_ ? harvester_->extractor_port() : config_.harvester.extractor_port,
          net::EndpointRole::client};
}

void Runtime::start(std::chrono::milliseconds attach_wait) {
  if (started_) return;
  if (!config_.store_path.empty() && config_.store_path.has_parent_path())
    std::filesystem::create_directories(config_.store_path.parent_path());
  store_ = std::make_unique<Store>(config_.store_path);

  if (runs(RunMode::harvest)) {
    harvester_ = std::make_unique<Harvester>(config_, *store_);
    harvester_->start();
  }
  if (runs(RunMode::serve)) {
    hub_ = std::make_unique<TapHub>(config_.service.tap_buffer);
    // In one process the extractor feeds the hub directly; otherwise new
    // receipts are picked up from the shared store.
    if (mode_ == RunMode::serve) {
      poller_ = std::make_unique<ReceiptPoller>(*store_, *hub_);
      poller_->start();
    }
    service_ = std::make_unique<Service>(config_, *store_, *hub_);
    service_->start();
  }
  if (runs(RunMode::extract)) {
    extractor_ = std::make_unique<Extractor>(config_, *store_);
    if (hub_) extractor_->on_receipt([hub = hub_.get()](const ExtractionReceipt& r) { hub->publish(r); });
    extractor_->attach(extractor_endpoint(), std::max(1, config_.extractor.workers));
    if (harvester_) {
      auto deadline = std::chrono::steady_clock::now() + attach_wait;
      while (harvester_->attached_extractors() < 1 && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(10ms);
      if (harvester_->attached_extractors() < 1) spdlog::warn("no extractor channel attached yet");
    }
  }
  if (runs(RunMode::monitor)) {
    monitor_ = std::make_unique<Monitor>(config_, *store_, harvester_endpoint());
    monitor_->start();
  }
  started_ = true;
}

void Runtime::stop() {
  if (!started_) return;
  started_ = false;
  if (monitor_) monitor_->stop();
  if (service_) service_->stop();
  if (poller_) poller_->stop();
  if (extractor_) extractor_->stop();
  if (harvester_) harvester_->stop();
  spdlog::info("stopped ({})", to_string(mode_));
  spdlog::default_logger()->flush();
}

std::string Runtime::ready_line() const {
  std::string line = "READY mode=" + std::string(to_string(mode_));
  if (harvester_) {
    auto h = harvester_endpoint();
    line += " harvester=" + h.host + ":" + std::to_string(h.port);
    line += " extractors=" + h.host + ":" + std::to_string(harvester_->extractor_port()) + "/" +
            std::to_string(harvester_->attached_extractors());
  } else if (extractor_) {
    auto e = extractor_endpoint();
    line += " extractor_of=" + e.host + ":" + std::to_string(e.port);
  }
  if (service_) line += " service=" + config_.service.host + ":" + std::to_string(service_->port());
  if (monitor_) line += " mounts=" + std::to_string(config_.mounts.size());
  return line;
}

bool Runtime::ping() const {
  OpsMessage msg;
  msg.role = OpsRole::test;
  msg.timestamp = Timestamp::now();
  msg.target = OpsTarget{"ping", "lims", ToolInfo{"ping", ToolKind::Characterization, std::nullopt}, std::nullopt,
                         std::nullopt, {}};
  try {
    return net::request(harvester_endpoint(), msg).role == OpsRole::ack;
  } catch (const std::exception& e) {
    spdlog::warn("ping failed: {}", e.what());
    return false;
  }
}

ShutdownSignals::ShutdownSignals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

int ShutdownSignals::wait() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

}  // namespace lims
