#include <doctest.h>

#include <map>
#include <random>
#include <thread>

#include "lims/extractor.hpp"
#include "lims/harvester.hpp"
#include "lims/timestamp.hpp"
#include "support.hpp"

using namespace lims;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

const char* kKey = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

std::string config_json(const fs::path& root, const std::string& harvester_extra = "") {
  return R"json({
  "store_path": "lims.db",
  "harvester": {"archive_root": "archive", "backup_root": "backup", "port": 0, "extractor_port": 0,
                "max_attempts": 3, "backoff_initial_ms": 10)json" +
         harvester_extra + R"json(},
  "tools": [
    {"name": "XRD Bruker", "translation": {
      "match_patterns": ["*.txt"], "format": "DelimitedColumns", "delimiter": ",",
      "columns": [{"name": "Angle", "units": "deg"}, {"name": "Counts", "units": "-"}], "priority": 5}},
    {"name": "N and K", "translation": {
      "match_patterns": ["*.1"], "format": "DelimitedColumns",
      "columns": [{"name": "Wavelength", "units": "nm"}, {"name": "Reflectance", "units": "exp"}], "priority": 1}},
    {"name": "SEM", "translation": {"match_patterns": ["*.img"], "format": "BinaryOpaque"}}
  ],
  "mounts": [
    {"instrument_name": "xrd", "host_label": "xrd-pc", "root_path": "src/xrd", "patterns": ["*.txt"], "tool": "XRD Bruker"},
    {"instrument_name": "nandk", "host_label": "nk-pc", "root_path": "src/nk", "patterns": ["*.1"], "tool": "N and K"},
    {"instrument_name": "sem", "host_label": "sem-pc", "root_path": "src/sem", "patterns": ["*.img"], "tool": "SEM"}
  ]
})json";
}

OpsMessage transfer(const std::string& host, const std::string& path, const std::string& tool,
                    OpsRole role = OpsRole::transfer) {
  OpsMessage m;
  m.role = role;
  m.timestamp = Timestamp::now();
  m.target = OpsTarget{path, host, ToolInfo{tool, ToolKind::Characterization, std::nullopt}, std::nullopt, std::nullopt, {}};
  return m;
}

std::string random_bytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string out(n, '\0');
  for (auto& c : out) c = static_cast<char>(rng() & 0xff);
  return out;
}

struct Fixture {
  testing::TempDir dir;
  Config config;
  Store store{":memory:"};
  std::unique_ptr<Harvester> harvester;

  explicit Fixture(const std::string& extra = "") : config(parse_config(config_json(dir.path(), extra), dir.path())) {
    harvester = std::make_unique<Harvester>(config, store);
  }

  fs::path source(const std::string& host_root, const std::string& rel, const std::string& content) {
    auto p = dir / ("src/" + host_root + "/" + rel);
    testing::write(p, content);
    return p;
  }
  std::string archived(const std::string& rel) { return read_file(config.harvester.archive_root / rel); }
  std::string backed_up(const std::string& rel) {
    return harvester->codec().decode(read_file(config.harvester.backup_root / rel));
  }
  Id log(const std::string& instrument, const std::string& host, const std::string& path, int version = 1) {
    HarvestLogEntry e;
    e.instrument_name = instrument;
    e.source_host = host;
    e.source_path = path;
    e.mtime = e.detected_at = Clock::now();
    e.version = version;
    auto id = store.log_insert(e);
    store.log_update(id, LogStatus::Notified);
    return id;
  }
};

std::size_t regular_files(const fs::path& root) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().string().find(".staging") == std::string::npos) ++n;
  return n;
}

template <class F>
bool eventually(F pred, std::chrono::milliseconds limit = 10s) {
  auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

TimePoint at(const char* iso) { return Timestamp::parse(iso)->instant(); }

}  // namespace

TEST_CASE("archive paths follow tool slug and date") {
  auto none = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
  CHECK(archive_path("nandk", "azo_azo_a239_output.1", "20130108", none, "h") ==
        "nandk/data/20130108/azo_azo_a239_output.1");
  CHECK(archive_path("XRD Bruker", "VCC_1234.txt", "20011217", none, "h") == "xrd_bruker/data/20011217/VCC_1234.txt");
  CHECK(tool_slug("N and K") == "n_and_k");
}

TEST_CASE("a name collision with different content takes the next free .v<k>") {
  std::map<std::string, std::string> held{{"xrd/data/20200101/a.txt", "h1"}, {"xrd/data/20200101/a.txt.v2", "h2"}};
  ArchiveView view = [&](const std::string& rel) -> std::optional<std::string> {
    auto it = held.find(rel);
    if (it == held.end()) return std::nullopt;
    return it->second;
  };
  CHECK(archive_path("XRD", "a.txt", "20200101", view, "h1") == "xrd/data/20200101/a.txt");
  CHECK(archive_path("XRD", "a.txt", "20200101", view, "h2") == "xrd/data/20200101/a.txt.v2");
  CHECK(archive_path("XRD", "a.txt", "20200101", view, "h3") == "xrd/data/20200101/a.txt.v3");
  held.erase("xrd/data/20200101/a.txt.v2");
  CHECK(archive_path("XRD", "a.txt", "20200101", view, "h3") == "xrd/data/20200101/a.txt.v2");
}

TEST_CASE("archive date uses plausible mtimes only") {
  auto now = at("2024-06-01T12:00:00Z");
  CHECK(archive_date(at("2013-01-08T09:30:00Z"), now) == "20130108");
  CHECK(archive_date(at("1985-03-03T00:00:00Z"), now) == "20240601");
  CHECK(archive_date(at("2024-06-05T00:00:00Z"), now) == "20240601");
  CHECK(archive_date(at("2024-06-01T23:00:00Z"), now) == "20240601");
}

TEST_CASE("queue orders by priority then enqueue time") {
  TaskQueue q;
  auto task = [](const std::string& path, int prio, TimePoint when, std::uint64_t size = 10) {
    TransferTask t;
    t.ops = transfer("h", path, "T");
    t.priority = prio;
    t.enqueued_at = when;
    t.size = size;
    return t;
  };
  auto t0 = Clock::now() - 1min;
  CHECK(q.push(task("low", 1, t0)));
  CHECK(q.push(task("high", 5, t0 + 1s)));
  CHECK(q.push(task("low2", 1, t0 - 1s)));
  const double inf = std::numeric_limits<double>::infinity();
  auto a = q.next(inf, inf, Clock::now());
  REQUIRE(a);
  CHECK(a->path() == "high");
  auto b = q.next(inf, inf, Clock::now());
  REQUIRE(b);
  CHECK(b->path() == "low2");

  SUBCASE("empty budget admits nothing") {
    CHECK_FALSE(q.next(0, 100, Clock::now()));
    CHECK(q.next(100, 100, Clock::now()));
  }
  SUBCASE("coalescing and per-path exclusion") {
    CHECK_FALSE(q.push(task("low", 3, t0)));  // already queued
    CHECK_FALSE(q.push(task("high", 5, t0)));  // same role executing
    auto upd = task("high", 5, t0);
    upd.ops.role = OpsRole::update;
    CHECK(q.push(upd));  // waits behind the running transfer
    CHECK(q.queued() == 2);
    auto c = q.next(inf, inf, Clock::now());
    REQUIRE(c);
    CHECK(c->path() == "low");
    CHECK_FALSE(q.next(inf, inf, Clock::now()));  // "high" is busy
    q.done(*a);
    auto d = q.next(inf, inf, Clock::now());
    REQUIRE(d);
    CHECK(d->path() == "high");
    CHECK(d->ops.role == OpsRole::update);
  }
  SUBCASE("large tasks are admitted once the bucket is full") {
    q.done(*a);
    q.done(*b);
    auto rest = q.next(50, 100, Clock::now());  // "low" costs 10
    REQUIRE(rest);
    CHECK(q.push(task("big", 9, t0, 1 << 30)));
    CHECK_FALSE(q.next(99, 100, Clock::now()));
    CHECK(q.next(100, 100, Clock::now()));
  }
  SUBCASE("backoff delays a retried task") {
    auto late = task("later", 9, t0);
    late.not_before = Clock::now() + 1h;
    CHECK(q.push(late));
    auto c = q.next(inf, inf, Clock::now());
    REQUIRE(c);
    CHECK(c->path() == "low");
  }
}

TEST_CASE("enqueue assigns tool priority and never drops unknown tools") {
  Fixture f;
  f.source("xrd", "VCC_1234.txt", "1,2\n");
  auto r = f.harvester->enqueue(transfer("xrd-pc", "VCC_1234.txt", "XRD Bruker"));
  CHECK(r.role == OpsRole::ack);
  CHECK(r.status->code == "OK");
  auto dup = f.harvester->enqueue(transfer("xrd-pc", "VCC_1234.txt", "XRD Bruker"));
  CHECK(dup.role == OpsRole::ack);
  CHECK(dup.status->detail == "coalesced");
  CHECK(f.harvester->queue().queued() == 1);

  auto u = f.harvester->enqueue(transfer("lab-pc", "/tmp/x.dat", "Mystery Tool"));
  CHECK(u.role == OpsRole::ack);
  CHECK(u.status->code == "E_UNKNOWN_TOOL");
  CHECK(f.harvester->queue().queued() == 2);

  const double inf = std::numeric_limits<double>::infinity();
  auto first = f.harvester->queue().next(inf, inf, Clock::now());
  REQUIRE(first);
  CHECK(first->priority == 5);
  CHECK(first->size == 4);
  auto second = f.harvester->queue().next(inf, inf, Clock::now());
  REQUIRE(second);
  CHECK(second->priority == 0);
  CHECK(second->unknown_tool);

  OpsMessage bad;
  bad.role = OpsRole::transfer;
  auto e = f.harvester->handle(bad).message;
  CHECK(e.role == OpsRole::error);
  CHECK(e.status->code == "E_SCHEMA");
  CHECK(f.harvester->handle(transfer("x", "y", "SEM", OpsRole::test)).message.status->detail == "harvester ready");
}

TEST_CASE("a 1 MiB file is archived byte-identical with a matching backup") {
  Fixture f;
  auto bytes = random_bytes(1 << 20, 7);
  auto src = f.source("sem", "scan_001.img", bytes);
  fs::last_write_time(src, to_file_time(at("2013-01-08T10:00:00Z")));
  auto out = f.harvester->execute_transfer(f.harvester->make_task(transfer("sem-pc", "scan_001.img", "SEM")));
  CHECK(out.archive_path == "sem/data/20130108/scan_001.img");
  CHECK(out.copied);
  CHECK(out.content_hash == sha256_hex(bytes));
  CHECK(sha256_file(f.config.harvester.archive_root / out.archive_path) == sha256_hex(bytes));
  CHECK(f.backed_up(out.archive_path) == bytes);
  CHECK(fs::last_write_time(f.config.harvester.archive_root / out.archive_path) == fs::last_write_time(src));
}

TEST_CASE("encrypted backups decrypt to the archived bytes") {
  Fixture f(std::string(R"(, "encrypt": true, "encryption_key_hex": ")") + kKey + "\"");
  CHECK(f.harvester->codec().name() == "secretstream");
  auto bytes = random_bytes(200'000, 3);
  f.source("sem", "b.img", bytes);
  auto out = f.harvester->execute_transfer(f.harvester->make_task(transfer("sem-pc", "b.img", "SEM")));
  auto sealed = read_file(f.config.harvester.backup_root / out.archive_path);
  CHECK(sealed != bytes);
  CHECK(sealed.find(bytes.substr(0, 64)) == std::string::npos);
  CHECK(f.backed_up(out.archive_path) == bytes);
  CHECK(f.archived(out.archive_path) == bytes);
}

TEST_CASE("duplicate transfers of an unchanged file archive it exactly once") {
  Fixture f;
  f.source("xrd", "run/VCC_1.txt", "1,2\n3,4\n");
  auto task = f.harvester->make_task(transfer("xrd-pc", "run/VCC_1.txt", "XRD Bruker"));
  auto first = f.harvester->execute_transfer(task);
  for (int i = 0; i < 4; ++i) {
    auto again = f.harvester->execute_transfer(task);
    CHECK(again.archive_path == first.archive_path);
    CHECK_FALSE(again.copied);
  }
  CHECK(regular_files(f.config.harvester.archive_root) == 1);
  CHECK(regular_files(f.config.harvester.backup_root) == 1);

  SUBCASE("a lost backup is restored on the next pass") {
    fs::remove(f.config.harvester.backup_root / first.archive_path);
    f.harvester->execute_transfer(task);
    CHECK(f.backed_up(first.archive_path) == "1,2\n3,4\n");
  }
  SUBCASE("a different file with the same name on the same day becomes .v2") {
    auto src2 = f.source("nk", "VCC_1.txt", "9,9\n");
    fs::last_write_time(src2, fs::last_write_time(f.dir / "src/xrd/run/VCC_1.txt"));
    auto t2 = f.harvester->make_task(transfer("nk-pc", "VCC_1.txt", "XRD Bruker"));
    auto other = f.harvester->execute_transfer(t2);
    CHECK(other.archive_path == first.archive_path + ".v2");
    CHECK(f.archived(first.archive_path) == "1,2\n3,4\n");
    CHECK(f.archived(other.archive_path) == "9,9\n");
  }
}

TEST_CASE("update swaps the canonical file and retains the prior version") {
  Fixture f;
  auto src = f.source("nk", "azo_a239.1", "1000 0.1\n");
  auto id1 = f.log("nandk", "nk-pc", "azo_a239.1");
  auto first = f.harvester->execute_transfer(f.harvester->make_task(transfer("nk-pc", "azo_a239.1", "N and K")));
  f.store.log_update(id1, LogStatus::Harvested, {std::nullopt, first.archive_path, {}});
  const auto& P = first.archive_path;

  testing::write(src, "1000 0.2\n");
  f.log("nandk", "nk-pc", "azo_a239.1", 2);
  auto upd = f.harvester->make_task(transfer("nk-pc", "azo_a239.1", "N and K", OpsRole::update));
  auto second = f.harvester->execute_transfer(upd);
  CHECK(second.archive_path == P);
  CHECK(second.swapped);
  CHECK(second.retained_as == P + ".v2");
  CHECK(f.archived(P) == "1000 0.2\n");
  CHECK(f.archived(P + ".v2") == "1000 0.1\n");
  CHECK(f.backed_up(P) == "1000 0.2\n");
  CHECK(f.backed_up(P + ".v2") == "1000 0.1\n");

  SUBCASE("re-running the same update changes nothing") {
    auto again = f.harvester->execute_transfer(upd);
    CHECK_FALSE(again.swapped);
    CHECK(regular_files(f.config.harvester.archive_root) == 2);
  }
  SUBCASE("a further update goes to .v3") {
    testing::write(src, "1000 0.3\n");
    auto third = f.harvester->execute_transfer(upd);
    CHECK(third.retained_as == P + ".v3");
    CHECK(f.archived(P + ".v3") == "1000 0.2\n");
    CHECK(f.archived(P) == "1000 0.3\n");
  }
  SUBCASE("a retry after a crash between link and rename keeps one retained copy") {
    // State left by a crash: P.v3 already links the current P.
    fs::create_hard_link(f.config.harvester.archive_root / P, f.config.harvester.archive_root / (P + ".v3"));
    testing::write(src, "1000 0.3\n");
    auto third = f.harvester->execute_transfer(upd);
    CHECK(third.retained_as == P + ".v3");
    CHECK_FALSE(fs::exists(f.config.harvester.archive_root / (P + ".v4")));
    CHECK(f.archived(P + ".v3") == "1000 0.2\n");
    CHECK(f.backed_up(P + ".v3") == "1000 0.2\n");
  }
}

TEST_CASE("a size change during copy is a verify failure") {
  Fixture f;
  f.source("sem", "grow.img", "abc");
  auto task = f.harvester->make_task(transfer("sem-pc", "grow.img", "SEM"));
  // Stat before copy reads 3; the file is then rewritten longer.
  f.source("sem", "grow.img", "abcdef");
  auto t2 = task;
  t2.source_file = f.dir / "src/sem/grow.img";
  CHECK_NOTHROW(f.harvester->execute_transfer(t2));  // consistent at copy time

  f.source("sem", "gone.img", "x");
  auto t3 = f.harvester->make_task(transfer("sem-pc", "gone.img", "SEM"));
  fs::remove(t3.source_file);
  try {
    f.harvester->execute_transfer(t3);
    FAIL("expected CopyFailed");
  } catch (const HarvestError& e) {
    CHECK(e.kind() == HarvestError::Kind::CopyFailed);
  }
}

TEST_CASE("a vanished source is retried then permanently failed") {
  Fixture f;
  f.source("sem", "lost.img", "data");
  auto id = f.log("sem", "sem-pc", "lost.img");
  fs::remove(f.dir / "src/sem/lost.img");
  f.harvester->start();
  f.harvester->enqueue(transfer("sem-pc", "lost.img", "SEM"));
  REQUIRE(eventually([&] { return f.store.log_entry(id)->attempts >= 3 && f.harvester->idle(); }));
  std::this_thread::sleep_for(100ms);
  auto e = *f.store.log_entry(id);
  CHECK(e.status == LogStatus::Failed);
  CHECK(e.attempts == 3);
  REQUIRE(e.error_detail);
  CHECK(e.error_detail->find("source unavailable") != std::string::npos);
  CHECK(f.harvester->idle());
  f.harvester->stop();
}

TEST_CASE("throttled copies stay within the token bucket bound") {
  const std::uint64_t rate = 200'000;
  Fixture f(", \"rate_limit_bytes_per_sec\": " + std::to_string(rate));
  CHECK(f.harvester->bucket().capacity() == doctest::Approx(rate));
  auto bytes = random_bytes(700'000, 11);
  f.source("sem", "slow.img", bytes);
  auto t0 = std::chrono::steady_clock::now();
  f.harvester->execute_transfer(f.harvester->make_task(transfer("sem-pc", "slow.img", "SEM")));
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // A full bucket covers the first `rate` bytes; the rest flows at `rate`.
  CHECK(elapsed >= (700'000.0 - rate) / rate * 0.95);
  CHECK(f.harvester->meter().total() == 700'000);
  for (int w : {1, 2}) {
    auto window = std::chrono::milliseconds(1000 * w);
    CHECK(f.harvester->meter().max_window_bytes(window) <= rate * (w + 1) + 64 * 1024);
  }
}

TEST_CASE("harvest, extract and readback through attached extractors") {
  Fixture f;
  f.config.harvester.workers = 2;
  f.harvester->start();
  auto ping = transfer("archive", "-", "XRD Bruker", OpsRole::test);
  auto ready = net::request({"127.0.0.1", f.harvester->port()}, ping);
  CHECK(ready.role == OpsRole::ack);

  OpsMessage rb;
  rb.role = OpsRole::readback;
  rb.timestamp = Timestamp::now();
  rb.target = OpsTarget{"xrd_bruker/data/x.txt", "archive", ToolInfo{"XRD Bruker"}, {}, {}, {}};
  auto none = net::request({"127.0.0.1", f.harvester->port()}, rb);
  CHECK(none.role == OpsRole::error);
  CHECK(none.status->code == "E_UNAVAILABLE");

  Extractor extractor(f.config, f.store);
  extractor.attach({"127.0.0.1", f.harvester->extractor_port()}, 2);
  REQUIRE(eventually([&] { return f.harvester->attached_extractors() == 2; }));

  f.source("xrd", "VCC_1234.txt", "10.0,5\n10.5,7\n");
  auto id = f.log("xrd", "xrd-pc", "VCC_1234.txt");
  auto ack = net::request({"127.0.0.1", f.harvester->port()}, transfer("xrd-pc", "VCC_1234.txt", "XRD Bruker"));
  CHECK(ack.role == OpsRole::ack);
  REQUIRE(eventually([&] { return f.store.log_entry(id)->status == LogStatus::Extracted; }));
  auto entry = *f.store.log_entry(id);
  REQUIRE(entry.archive_path);
  auto file = f.store.file_by_archive_path(*entry.archive_path);
  REQUIRE(file);
  CHECK(file->original_path == "xrd-pc:VCC_1234.txt");

  rb.target->source_path = *entry.archive_path;
  auto reply = net::request_with_attachment({"127.0.0.1", f.harvester->port()}, rb);
  CHECK(reply.message.role == OpsRole::ack);
  REQUIRE(reply.attachment);
  auto doc = decode_data_document(*reply.attachment);
  CHECK(doc.role == DocRole::readback);
  REQUIRE(doc.aggregates.size() == 1);
  CHECK(doc.aggregates[0].series[1].data == std::vector<std::string>{"5", "7"});

  extractor.stop();
  f.harvester->stop();
}
