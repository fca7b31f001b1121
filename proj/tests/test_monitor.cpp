#include <doctest.h>

#include <random>
#include <thread>

#include "lims/extractor.hpp"
#include "lims/harvester.hpp"
#include "lims/monitor.hpp"
#include "lims/timestamp.hpp"
#include "support.hpp"

using namespace lims;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

std::string config_json(int harvester_port = 0) {
  return R"json({
  "store_path": "lims.db",
  "harvester": {"archive_root": "archive", "backup_root": "backup", "extractor_port": 0,
                "port": )json" + std::to_string(harvester_port) + R"json(},
  "monitor": {"staleness_ms": 60000, "retry_initial_ms": 10, "retry_max_ms": 40},
  "tools": [
    {"name": "XRD", "translation": {
      "match_patterns": ["*.txt"], "format": "DelimitedColumns", "delimiter": ",",
      "columns": [{"name": "Angle", "units": "deg"}, {"name": "Counts", "units": "-"}]}}
  ],
  "mounts": [
    {"instrument_name": "xrd", "host_label": "xrd-pc", "root_path": "share", "patterns": ["*.txt"], "tool": "XRD",
     "sample_pattern": "(VCC_[0-9]+)", "operator": "jdoe"}
  ]
})json";
}

struct Fixture {
  testing::TempDir dir;
  Config config;
  Store store{":memory:"};

  explicit Fixture(int port = 0) : config(parse_config(config_json(port), dir.path())) {
    fs::create_directories(mount().root_path);
  }
  const InstrumentMount& mount() const { return config.mounts.at(0); }
  fs::path put(const std::string& rel, const std::string& content) {
    auto p = mount().root_path / rel;
    testing::write(p, content);
    return p;
  }
  Id log_as_seen(const std::string& rel, LogStatus status = LogStatus::Extracted) {
    auto files = list_mount(mount());
    auto it = std::find_if(files.begin(), files.end(), [&](const MountFile& f) { return f.path == rel; });
    REQUIRE(it != files.end());
    HarvestLogEntry e;
    e.instrument_name = "xrd";
    e.source_host = "xrd-pc";
    e.source_path = rel;
    e.size = it->size;
    e.mtime = it->mtime;
    e.detected_at = Clock::now();
    auto id = store.log_insert(e);
    if (status != LogStatus::Detected) store.log_update(id, status);
    return id;
  }
};

/// A harvester stand-in that records what it was sent.
struct FakeHarvester {
  std::mutex mu;
  std::vector<OpsMessage> seen;
  std::atomic<int> refuse{0};  // answer this many requests with an error
  std::unique_ptr<net::Server> server;

  FakeHarvester() {
    server = net::serve({"127.0.0.1", 0, net::EndpointRole::server}, [this](const OpsMessage& m) -> net::Reply {
      std::lock_guard lock(mu);
      seen.push_back(m);
      if (refuse > 0) {
        --refuse;
        return OpsMessage::error("E_BUSY", "try later");
      }
      return OpsMessage::ack();
    });
  }
  net::Endpoint endpoint() const { return {"127.0.0.1", server->port()}; }
};

template <class F>
bool eventually(F pred, std::chrono::milliseconds limit = 10s) {
  auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

}  // namespace

TEST_CASE("scan reports unseen files in path order") {
  Fixture f;
  f.put("VCC_1234.txt", "1,2\n");
  auto events = scan(f.mount(), f.store);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == FileEventKind::New);
  CHECK(events[0].source_path == "VCC_1234.txt");
  CHECK(events[0].size == 4);

  f.put("b/VCC_2.txt", "x");
  f.put("a.txt", "y");
  f.put("ignored.csv", "z");
  events = scan(f.mount(), f.store);
  std::vector<std::string> paths;
  for (const auto& e : events) paths.push_back(e.source_path);
  CHECK(paths == std::vector<std::string>{"VCC_1234.txt", "a.txt", "b/VCC_2.txt"});
}

TEST_CASE("size changes of logged files are updates") {
  Fixture f;
  f.put("VCC_1.txt", std::string(1024, 'a'));
  f.log_as_seen("VCC_1.txt");
  CHECK(scan(f.mount(), f.store).empty());
  f.put("VCC_1.txt", std::string(2048, 'a'));
  auto events = scan(f.mount(), f.store);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == FileEventKind::Updated);
  CHECK(events[0].previous_size == 1024u);
  CHECK(events[0].size == 2048u);
}

TEST_CASE("same-size edits are caught by mtime") {
  Fixture f;
  auto p = f.put("VCC_1.txt", "aaaa");
  f.log_as_seen("VCC_1.txt");
  f.put("VCC_1.txt", "bbbb");
  fs::last_write_time(p, fs::last_write_time(p) + 5s);
  auto events = scan(f.mount(), f.store);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == FileEventKind::Updated);
  CHECK(events[0].previous_size == 4u);
}

TEST_CASE("files are announced only after two agreeing scans") {
  Fixture f;
  StabilityState state;
  auto p = f.put("VCC_1.txt", "12");
  CHECK(scan(f.mount(), f.store, &state).empty());
  f.put("VCC_1.txt", "1234");  // still being written
  CHECK(scan(f.mount(), f.store, &state).empty());
  auto events = scan(f.mount(), f.store, &state);
  REQUIRE(events.size() == 1);
  CHECK(events[0].size == 4);
}

TEST_CASE("a vanished mount is MountUnavailable") {
  Fixture f;
  fs::remove_all(f.mount().root_path);
  try {
    scan(f.mount(), f.store);
    FAIL("expected MountUnavailable");
  } catch (const MonitorError& e) {
    CHECK(e.kind() == MonitorError::Kind::MountUnavailable);
  }
  CHECK_THROWS_AS(reconcile(f.mount(), f.store, 1s), MonitorError);
}

TEST_CASE("notify logs, announces and versions updates") {
  Fixture f;
  FakeHarvester h;
  Monitor m(f.config, f.store, h.endpoint());
  f.put("run/VCC_77.txt", "1,2\n");
  auto events = scan(f.mount(), f.store);
  REQUIRE(events.size() == 1);
  auto e = m.notify(events[0], f.mount());
  CHECK(e.status == LogStatus::Notified);
  CHECK_FALSE(e.error_detail);
  CHECK(e.notified_at);
  CHECK(e.version == 1);
  REQUIRE(h.seen.size() == 1);
  const auto& msg = h.seen[0];
  CHECK(msg.role == OpsRole::transfer);
  CHECK(msg.target->source_path == "run/VCC_77.txt");
  CHECK(msg.target->source_host == "xrd-pc");
  CHECK(msg.target->tool.name == "XRD");
  CHECK(msg.target->sample_id == "VCC_77");
  CHECK(msg.target->operator_username == "jdoe");

  f.put("run/VCC_77.txt", "1,2\n3,4\n");
  events = scan(f.mount(), f.store);
  REQUIRE(events.size() == 1);
  auto e2 = m.notify(events[0], f.mount());
  CHECK(e2.version == 2);
  CHECK(e2.status == LogStatus::Notified);
  CHECK(h.seen.back().role == OpsRole::update);
  CHECK(scan(f.mount(), f.store).empty());
}

TEST_CASE("a refused announcement is Failed and retried with backoff") {
  Fixture f;
  std::uint16_t dead_port = 0;
  {
    net::Listener probe({"127.0.0.1", 0, net::EndpointRole::server});
    dead_port = probe.port();
  }
  Monitor down(f.config, f.store, {"127.0.0.1", dead_port});
  f.put("VCC_1.txt", "1");
  auto e = down.notify(scan(f.mount(), f.store).at(0), f.mount());
  CHECK(e.status == LogStatus::Failed);
  CHECK(e.error_detail == "ConnectionRefused");
  CHECK(down.pending_retries() == 1);

  FakeHarvester h;
  h.refuse = 1;
  Monitor m(f.config, f.store, h.endpoint());
  f.put("VCC_2.txt", "2");
  auto ev = scan(f.mount(), f.store);
  REQUIRE(ev.size() == 1);  // VCC_1 is logged already
  auto e2 = m.notify(ev[0], f.mount());
  CHECK(e2.status == LogStatus::Failed);
  CHECK(e2.error_detail == "E_BUSY: try later");
  CHECK(m.pending_retries() == 1);
  m.poll_once(f.mount());  // not yet due
  REQUIRE(eventually([&] {
    m.poll_once(f.mount());
    return m.pending_retries() == 0;
  }));
  auto after = *f.store.log_entry(e2.entry_id);
  CHECK(after.status == LogStatus::Notified);
  CHECK(after.attempts == 1);
  CHECK_FALSE(after.error_detail);
}

TEST_CASE("reconcile finds missed files and stuck entries") {
  Fixture f;
  f.put("done.txt", "1");
  f.put("stuck.txt", "2");
  f.put("missed.txt", "3");
  f.log_as_seen("done.txt", LogStatus::Extracted);
  auto stuck = f.log_as_seen("stuck.txt", LogStatus::Notified);

  auto fresh = reconcile(f.mount(), f.store, 1min);
  REQUIRE(fresh.size() == 1);
  CHECK(fresh[0].source_path == "missed.txt");
  CHECK(fresh[0].kind == FileEventKind::New);
  CHECK_FALSE(fresh[0].entry_id);

  auto later = reconcile(f.mount(), f.store, 1min, Clock::now() + 2min);
  REQUIRE(later.size() == 2);
  CHECK(later[0].source_path == "missed.txt");
  CHECK(later[1].source_path == "stuck.txt");
  CHECK(later[1].entry_id == stuck);

  FakeHarvester h;
  Monitor m(f.config, f.store, h.endpoint());
  for (const auto& ev : later) m.notify(ev, f.mount());
  CHECK(f.store.log_all().size() == 3);  // stuck entry reused, not duplicated
  CHECK(h.seen.size() == 2);
}

TEST_CASE("unchanged trees produce no events on repeated scans") {
  Fixture f;
  FakeHarvester h;
  Monitor m(f.config, f.store, h.endpoint());
  std::mt19937 rng(5);
  for (int round = 0; round < 5; ++round) {
    for (int i = 0; i < 8; ++i)
      if (rng() % 3 == 0) f.put("d" + std::to_string(i % 3) + "/f" + std::to_string(i) + ".txt", std::string(rng() % 50 + 1, 'x'));
    for (const auto& ev : scan(f.mount(), f.store)) m.notify(ev, f.mount());
    for (int k = 0; k < 3; ++k) CHECK(scan(f.mount(), f.store).empty());
  }
  for (const auto& e : f.store.log_all()) CHECK(e.status == LogStatus::Notified);
}

TEST_CASE("pipeline converges after the harvester was down") {
  // Reserve a port, then leave it closed while files appear.
  std::uint16_t port = 0;
  {
    net::Listener probe({"127.0.0.1", 0, net::EndpointRole::server});
    port = probe.port();
  }
  Fixture f(port);
  f.config.monitor.staleness = 0ms;
  Monitor m(f.config, f.store, {"127.0.0.1", port});
  for (int i = 0; i < 6; ++i) f.put("VCC_" + std::to_string(i) + ".txt", std::to_string(i) + ",1\n");
  m.poll_once(f.mount());
  m.poll_once(f.mount());
  REQUIRE(f.store.log_all().size() == 6);
  for (const auto& e : f.store.log_all()) CHECK(e.status == LogStatus::Failed);

  Harvester harvester(f.config, f.store);
  harvester.start();
  Extractor extractor(f.config, f.store);
  extractor.attach({"127.0.0.1", harvester.extractor_port()}, 1);
  REQUIRE(eventually(
      [&] {
        m.poll_once(f.mount());
        m.reconcile_once(f.mount());
        auto all = f.store.log_all();
        return std::all_of(all.begin(), all.end(), [](const auto& e) { return e.status == LogStatus::Extracted; });
      },
      20s));
  CHECK(scan(f.mount(), f.store).empty());
  CHECK(reconcile(f.mount(), f.store, 0ms).empty());
  CHECK(f.store.count("file_information") == 6);
  extractor.stop();
  harvester.stop();
}
