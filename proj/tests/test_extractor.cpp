#include <doctest.h>

#include <random>

#include "lims/extractor.hpp"
#include "support.hpp"

using namespace lims;

namespace {

std::string config_json(const std::filesystem::path& root) {
  return R"json({
  "store_path": "lims.db",
  "harvester": {"archive_root": ")json" + (root / "archive").string() + R"json(", "backup_root": "backup"},
  "projects": [{"name": "AZO", "sample_prefix": "azo-"}],
  "tools": [
    {"name": "N and K", "translation": {
      "match_patterns": ["*.1"], "format": "HeaderPlusColumns",
      "columns": [{"name": "Wavelength", "units": "nm"}, {"name": "Reflectance", "units": "exp"}],
      "header_rules": [{"key_pattern": "^method$", "metadata_name": "method", "as_comment": true},
                       {"key_pattern": "^[xy]$", "metadata_name": "pos", "units": "position"}],
      "measurement_type": "Reflectance and Transmission"}},
    {"name": "XRD", "translation": {
      "match_patterns": ["*.csv"], "format": "DelimitedColumns", "delimiter": ",", "skip_lines": 1,
      "columns": [{"name": "Angle", "units": "deg"}, {"name": "Counts", "units": "-"}]}},
    {"name": "JV", "translation": {
      "match_patterns": ["*.jv"], "format": "HeaderPlusColumns", "aggregate_rule": "SplitOnBlankLine",
      "columns": [{"name": "Voltage", "units": "V"}, {"name": "Current", "units": "A"}],
      "header_rules": [{"key_pattern": "^device$", "metadata_name": "device"}],
      "storage_target": "semantic:jv_curve",
      "semantic_mapping": {"x_descriptor": "Voltage", "y_descriptor": "Current", "device_meta_key": "device"}}},
    {"name": "SEM", "translation": {"match_patterns": ["*.img"], "format": "BinaryOpaque"}},
    {"name": "Loose", "translation": {
      "match_patterns": ["*.txt"], "format": "DelimitedColumns", "lenient": true,
      "columns": [{"name": "a", "units": "-"}, {"name": "b", "units": "-"}]}}
  ]
})json";
}

struct Fixture {
  testing::TempDir dir;
  Config config = parse_config(config_json(dir.path()), dir.path());
  Store store{":memory:"};
  Extractor extractor{config, store};

  std::string put(const std::string& rel, const std::string& content) {
    testing::write(config.harvester.archive_root / rel, content);
    return rel;
  }
  OpsMessage msg(OpsRole role, const std::string& rel, const std::string& tool,
                 std::optional<std::string> sample = std::nullopt) {
    OpsMessage m;
    m.role = role;
    m.timestamp = Timestamp::now();
    m.target = OpsTarget{rel, "archive", ToolInfo{tool, ToolKind::Characterization, std::nullopt}, sample, "jdoe", {}};
    return m;
  }
};

TranslationContext ctx_for(const std::string& path) {
  TranslationContext c;
  c.tool = ToolInfo{"N and K", ToolKind::Characterization, 23};
  c.archive_path = path;
  c.file_name = std::filesystem::path(path).filename().string();
  return c;
}

const char* kNandK = "method: RTnk\nx = 0.0000\n1000.00 0.096500\n999.00 0.096100\n";

}  // namespace

TEST_CASE("two-column whitespace file matches the Fig 5 series") {
  Fixture f;
  const auto& cfg = *f.config.find_tool("N and K");
  auto t = translate("1000.00 0.096500\n999.00    0.096100\n", cfg, ctx_for("nandk/data/20130108/azo_azo_a239_output.1"));
  auto fig5 = decode_data_document(testing::fixture("fig5_data.xml"));
  REQUIRE(t.doc.aggregates.size() == 1);
  CHECK(t.doc.aggregates[0].series == fig5.aggregates[0].series);
  CHECK(t.doc.data_file_link.file == fig5.data_file_link.file);
  CHECK(t.doc.tool.name == "N and K");
  CHECK(t.doc.tool.id == std::optional<std::int64_t>(23));
  CHECK(validate(t.doc).empty());
}

TEST_CASE("header rules become metadata") {
  Fixture f;
  auto t = translate(kNandK, *f.config.find_tool("N and K"), ctx_for("nandk/a.1"));
  const auto& md = t.doc.aggregates.at(0).metadata;
  REQUIRE(md.size() == 2);
  CHECK(md[0].name == "method");
  CHECK(md[0].comments == std::optional<std::string>("RTnk"));
  CHECK_FALSE(md[0].value);
  CHECK(md[0].units == "-");
  CHECK(md[1].name == "pos");
  CHECK(md[1].value == std::optional<std::string>("0.0000"));
  CHECK(md[1].units == "position");
  CHECK(t.doc.aggregates[0].series[0].data == std::vector<std::string>{"1000.00", "999.00"});
}

TEST_CASE("delimited file with skipped header and comma delimiter") {
  Fixture f;
  auto t = translate("angle,counts\n10.0, 5\n10.5,7\n", *f.config.find_tool("XRD"), ctx_for("xrd/a.csv"));
  REQUIRE(t.doc.aggregates.size() == 1);
  CHECK(t.doc.aggregates[0].series[0].data == std::vector<std::string>{"10.0", "10.5"});
  CHECK(t.doc.aggregates[0].series[1].data == std::vector<std::string>{"5", "7"});
}

TEST_CASE("strict mode reports the offending line; lenient mode counts it") {
  Fixture f;
  try {
    translate("angle,counts\n10.0,5\n10.5\n11,2\n", *f.config.find_tool("XRD"), ctx_for("xrd/a.csv"));
    FAIL("expected a parse error");
  } catch (const TranslateError& e) {
    CHECK(e.kind() == TranslateError::Kind::ParseError);
    CHECK(e.line() == 3);
  }
  auto t = translate("1 2\n3\n4 5\n6 7 8\n", *f.config.find_tool("Loose"), ctx_for("l/a.txt"));
  CHECK(t.skipped_rows == 2);
  CHECK(t.doc.aggregates[0].series[0].data == std::vector<std::string>{"1", "4"});
}

TEST_CASE("blank lines split aggregates") {
  Fixture f;
  auto t = translate("device: D1\n0 1\n0.5 2\n\n\ndevice: D2\n0 3\n", *f.config.find_tool("JV"), ctx_for("jv/a.jv"));
  REQUIRE(t.doc.aggregates.size() == 2);
  CHECK(t.doc.aggregates[0].find_metadata("device")->value == std::optional<std::string>("D1"));
  CHECK(t.doc.aggregates[1].series[1].data == std::vector<std::string>{"3"});
}

TEST_CASE("binary files yield metadata only") {
  Fixture f;
  auto c = ctx_for("sem/data/20130108/scan.img");
  c.size = 4096;
  c.mtime = Timestamp::parse("2013-01-08T10:00:00Z")->instant();
  auto t = translate(std::string("\x89PNG\0\0", 6), *f.config.find_tool("SEM"), c);
  REQUIRE(t.doc.aggregates.size() == 1);
  CHECK(t.doc.aggregates[0].series.empty());
  CHECK(t.doc.aggregates[0].find_metadata("filename")->value == std::optional<std::string>("scan.img"));
  CHECK(t.doc.aggregates[0].find_metadata("size_bytes")->value == std::optional<std::string>("4096"));
  CHECK(t.doc.aggregates[0].find_metadata("mtime")->value == std::optional<std::string>("2013-01-08T10:00:00Z"));
  CHECK(validate(t.doc).empty());
}

TEST_CASE("regenerate") {
  Fixture f;
  auto fig5 = decode_data_document(testing::fixture("fig5_data.xml"));
  CHECK(regenerate(fig5, *f.config.find_tool("N and K")) == "1000.00 0.096500\n999.00 0.096100\n");
  auto uneven = fig5;
  uneven.aggregates[0].series[1].data.pop_back();
  try {
    regenerate(uneven, *f.config.find_tool("N and K"));
    FAIL("expected UnequalLengths");
  } catch (const TranslateError& e) {
    CHECK(e.kind() == TranslateError::Kind::UnequalLengths);
  }
  try {
    regenerate(fig5, *f.config.find_tool("SEM"));
    FAIL("expected UnsupportedFormat");
  } catch (const TranslateError& e) {
    CHECK(e.kind() == TranslateError::Kind::UnsupportedFormat);
  }
  CHECK(regenerate(translate("a,b\n1,2\n", *f.config.find_tool("XRD"), ctx_for("x.csv")).doc,
                   *f.config.find_tool("XRD")) == "1,2\n");
}

TEST_CASE("translate, extract, readback, regenerate reproduces the table") {
  Fixture f;
  const auto& cfg = *f.config.find_tool("N and K");
  std::mt19937_64 rng(21);
  for (int i = 0; i < 40; ++i) {
    std::string table;
    auto rows = 1 + rng() % 50;
    for (std::size_t r = 0; r < rows; ++r) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.*f %.*f\n", static_cast<int>(rng() % 4), (rng() % 200000) / 100.0 - 500,
                    static_cast<int>(rng() % 7), (rng() % 1000000) / 1e6);
      table += buf;
    }
    auto rel = f.put("nandk/data/20130108/t" + std::to_string(i) + ".1", "method: RTnk\n" + table);
    auto reply = f.extractor.handle(f.msg(OpsRole::transfer, rel, "N and K"));
    REQUIRE(reply.message.role == OpsRole::ack);
    auto id = f.store.file_by_archive_path(rel)->id;
    CHECK(regenerate(f.extractor.readback(id), cfg) == table);
  }
}

TEST_CASE("transfer stores arrays and repeats are no-ops") {
  Fixture f;
  auto rel = f.put("nandk/data/20130108/azo_azo_a239_output.1", kNandK);
  std::vector<ExtractionReceipt> seen;
  f.extractor.on_receipt([&](const ExtractionReceipt& r) { seen.push_back(r); });
  auto reply = f.extractor.handle(f.msg(OpsRole::transfer, rel, "N and K", "azo-a239"));
  REQUIRE(reply.message.role == OpsRole::ack);
  CHECK(reply.message.status->code == "OK");
  auto info = f.store.file_by_archive_path(rel);
  REQUIRE(info);
  auto arrays = f.store.arrays(info->id);
  REQUIRE(arrays.size() == 2);
  CHECK(arrays[0].descriptors == std::vector<std::string>{"Wavelength", "nm"});
  CHECK(arrays[1].lexemes == std::vector<std::string>{"0.096500", "0.096100"});
  REQUIRE(seen.size() == 1);
  CHECK(seen[0].project == std::optional<std::string>("AZO"));
  CHECK(seen[0].tool_name == "N and K");
  CHECK(f.store.receipts_after(0).size() == 1);

  auto again = f.extractor.handle(f.msg(OpsRole::transfer, rel, "N and K", "azo-a239"));
  CHECK(again.message.status->code == "UNCHANGED");
  CHECK(seen.size() == 1);
  CHECK(f.store.count("file_information") == 1);
  CHECK(f.store.count("data_arrays") == 2);
}

TEST_CASE("update bumps the version and replaces arrays") {
  Fixture f;
  auto rel = f.put("nandk/data/20130108/a.1", kNandK);
  f.extractor.handle(f.msg(OpsRole::transfer, rel, "N and K"));
  f.put(rel, "method: RTnk\n1000.00 0.1\n999.00 0.2\n998.00 0.3\n");
  auto reply = f.extractor.handle(f.msg(OpsRole::update, rel, "N and K"));
  REQUIRE(reply.message.role == OpsRole::ack);
  CHECK(f.store.count("file_information") == 1);
  CHECK(f.store.count("data_arrays") == 2);
  auto info = f.store.file_by_archive_path(rel);
  CHECK(info->version == 2);
  CHECK(f.store.arrays(info->id)[0].lexemes.size() == 3);
  CHECK(f.store.receipts_after(0).size() == 2);
}

TEST_CASE("a failed re-parse leaves the stored data intact") {
  Fixture f;
  auto rel = f.put("xrd/data/20130108/a.csv", "h\n1,2\n3,4\n");
  f.extractor.handle(f.msg(OpsRole::transfer, rel, "XRD"));
  f.put(rel, "h\n1,2\n3\n");
  auto reply = f.extractor.handle(f.msg(OpsRole::update, rel, "XRD"));
  REQUIRE(reply.message.role == OpsRole::error);
  CHECK(reply.message.status->code == "E_PARSE");
  auto info = f.store.file_by_archive_path(rel);
  CHECK(info->version == 1);
  CHECK(f.store.arrays(info->id)[0].lexemes == std::vector<std::string>{"1", "3"});
}

TEST_CASE("error codes") {
  Fixture f;
  auto rel = f.put("odd/data/20130108/a.dat", "1 2\n");
  CHECK(f.extractor.handle(f.msg(OpsRole::transfer, rel, "Nope")).message.status->code == "E_NOCONFIG");
  auto rb = f.msg(OpsRole::readback, "nandk/none.1", "N and K");
  auto reply = f.extractor.handle(rb);
  CHECK(reply.message.role == OpsRole::error);
  CHECK(reply.message.status->code == "E_STORE");
  CHECK(reply.message.status->detail == "not found");
  CHECK(f.extractor.handle(f.msg(OpsRole::transfer, "nandk/missing.1", "N and K")).message.status->code == "E_STORE");
  CHECK(f.extractor.handle(f.msg(OpsRole::test, "", "N and K")).message.role == OpsRole::ack);
}

TEST_CASE("readback replies with the document as an attachment") {
  Fixture f;
  auto rel = f.put("sem/data/20130108/scan.img", std::string(100, 'z'));
  REQUIRE(f.extractor.handle(f.msg(OpsRole::transfer, rel, "SEM")).message.role == OpsRole::ack);
  auto m = f.msg(OpsRole::readback, "ignored", "SEM");
  set_extra_attribute(*m.target, kFileIdAttr, std::to_string(f.store.file_by_archive_path(rel)->id));
  auto reply = f.extractor.handle(m);
  REQUIRE(reply.attachment);
  auto doc = decode_data_document(*reply.attachment);
  CHECK(doc.role == DocRole::readback);
  REQUIRE(doc.aggregates.size() == 1);
  CHECK(doc.aggregates[0].series.empty());
  CHECK(doc.aggregates[0].find_metadata("size_bytes")->value == std::optional<std::string>("100"));
}

TEST_CASE("semantic tools are promoted during extraction") {
  Fixture f;
  auto rel = f.put("jv/data/20130108/a.jv", "device: D1\n0 -0.03\n0.5 0.01\n\ndevice: D2\n0 -0.02\n");
  auto reply = f.extractor.handle(f.msg(OpsRole::transfer, rel, "JV"));
  REQUIRE(reply.message.role == OpsRole::ack);
  auto curves = f.store.jv_curves(f.store.file_by_archive_path(rel)->id);
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].device_id == "D1");
  CHECK(curves[0].points == std::vector<JvPoint>{{0, -0.03}, {0.5, 0.01}});
  CHECK(curves[1].points.size() == 1);
}

TEST_CASE("attached channels serve requests and reconnect") {
  using namespace std::chrono_literals;
  Fixture f;
  auto rel = f.put("nandk/data/20130108/a.1", kNandK);
  net::Listener listener(net::Endpoint{"127.0.0.1", 0, net::EndpointRole::server});
  f.extractor.attach(net::Endpoint{"127.0.0.1", listener.port()}, 1);
  for (int round = 0; round < 2; ++round) {
    auto sock = listener.accept(5s);
    REQUIRE(sock.valid());
    net::Connection conn(std::move(sock));
    auto reply = conn.request(f.msg(round == 0 ? OpsRole::transfer : OpsRole::test, rel, "N and K"));
    CHECK(reply.message.role == OpsRole::ack);
    // dropping the connection makes the extractor dial again
  }
  f.extractor.stop();
  CHECK(f.store.count("file_information") == 1);
}
