#include <random>

#include "doctest.h"
#include "lims/format.hpp"
#include "support.hpp"

using namespace lims;

namespace {

std::string replace(std::string s, const std::string& from, const std::string& to) {
  auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

bool has_violation(const FormatError& e, const std::string& needle) {
  for (const auto& v : e.violations())
    if (v.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("ops message: published example decodes to every listed value") {
  auto msg = decode_ops_message(testing::fixture("fig3_ops.xml"));
  CHECK(msg.role == OpsRole::transfer);
  CHECK(msg.timestamp.str() == "2001-12-17T09:30:47Z");
  REQUIRE(msg.target);
  CHECK(msg.target->source_path == "/mnt/bruker/frames/VCC_1234.txt");
  CHECK(msg.target->source_host == "nexus");
  CHECK(msg.target->tool.name == "XRD Bruker");
  CHECK(msg.target->tool.kind == ToolKind::Characterization);
  CHECK(msg.target->sample_id == "cigs-0013-00023");
  CHECK(msg.target->operator_username == "jdoe");
  CHECK_FALSE(msg.status);
  // Schema-location attributes ride along as extras.
  CHECK(msg.extras.attributes.size() == 2);
}

TEST_CASE("ops message: missing role is a schema violation") {
  auto doc = replace(testing::fixture("fig3_ops.xml"), "role=\"transfer\" ", "");
  try {
    decode_ops_message(doc);
    FAIL("expected SchemaViolation");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::SchemaViolation);
    CHECK(has_violation(e, "role required"));
  }
}

TEST_CASE("ops message: violations are collected together") {
  std::string doc = R"(<NCPVops timestamp="yesterday"><Target><ToolInfo name="" type="Other"/></Target></NCPVops>)";
  try {
    decode_ops_message(doc);
    FAIL("expected SchemaViolation");
  } catch (const FormatError& e) {
    CHECK(has_violation(e, "role required"));
    CHECK(has_violation(e, "not ISO-8601"));
    CHECK(has_violation(e, "<Source> required"));
    CHECK(has_violation(e, "Characterization|Processing"));
    CHECK(e.violations().size() >= 4);
  }
}

TEST_CASE("ops message: command roles require Target") {
  std::string doc = R"(<NCPVops role="update" timestamp="2001-12-17T09:30:47Z"/>)";
  CHECK_THROWS_AS(decode_ops_message(doc), FormatError);
}

TEST_CASE("ops message: malformed XML is distinguished from schema failures") {
  try {
    decode_ops_message("<NCPVops role='transfer'");
    FAIL("expected MalformedXml");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::MalformedXml);
  }
}

TEST_CASE("ops message: encoding uses the published element and attribute names") {
  auto msg = decode_ops_message(testing::fixture("fig3_ops.xml"));
  auto xml = encode_ops_message(msg);
  for (const char* needle : {"<NCPVops", "role=\"transfer\"", "path=\"/mnt/bruker/frames/VCC_1234.txt\"",
                             "host=\"nexus\"", "<Target>", "<Source", "<ToolInfo", "<SampleID>cigs-0013-00023</SampleID>",
                             "<Operator>", "<Username>jdoe</Username>"}) {
    CAPTURE(needle);
    CHECK(xml.find(needle) != std::string::npos);
  }
  CHECK(decode_ops_message(xml) == msg);
}

TEST_CASE("ops message: ack has status and no Target") {
  auto ack = OpsMessage::ack("OK");
  auto xml = encode_ops_message(ack);
  CHECK(xml.find("<Status code=\"OK\"") != std::string::npos);
  CHECK(xml.find("Target") == std::string::npos);
  CHECK(decode_ops_message(xml) == ack);
}

TEST_CASE("ops message: error round-trips") {
  auto err = OpsMessage::error("E_COPY", "disk full");
  auto back = decode_ops_message(encode_ops_message(err));
  CHECK(back == err);
  CHECK(back.status->detail == "disk full");
}

TEST_CASE("ops message: invariant violations are refused at encode") {
  OpsMessage m;
  m.role = OpsRole::ack;
  CHECK_THROWS_AS(encode_ops_message(m), FormatError);
  m.role = OpsRole::transfer;
  CHECK_THROWS_AS(encode_ops_message(m), FormatError);
}

TEST_CASE("data document: published example decodes verbatim") {
  auto doc = decode_data_document(testing::fixture("fig5_data.xml"));
  CHECK(doc.role == DocRole::archive);
  CHECK(doc.timestamp.str() == "2012-09-25T12:45:03");
  CHECK(doc.doc_id.empty());
  CHECK(doc.kind == ToolKind::Characterization);
  CHECK(doc.measurement_type.id == 1);
  CHECK(doc.measurement_type.name == "Reflectance and Transmission");
  CHECK(doc.tool.id == 23);
  CHECK(doc.tool.name == "N and K");
  CHECK(doc.operator_id == 7);
  CHECK(doc.data_file_link.file == "nandk/data/20130108/azo_azo_a239_output.1");
  CHECK(doc.data_file_link.timestamp.str() == "2012-09-25T12:45:03");
  CHECK(doc.comments.empty());
  REQUIRE(doc.aggregates.size() == 1);
  const auto& agg = doc.aggregates[0];
  REQUIRE(agg.metadata.size() == 3);
  CHECK(agg.metadata[0].name == "x");
  CHECK(agg.metadata[0].value == "0.0000");
  CHECK(agg.metadata[0].units == "position");
  CHECK(agg.metadata[1].name == "y");
  CHECK(agg.metadata[2].name == "method");
  CHECK(agg.metadata[2].units == "-");
  CHECK(agg.metadata[2].comments == "RTnk");
  CHECK_FALSE(agg.metadata[2].value);
  REQUIRE(agg.series.size() == 2);
  CHECK(agg.series[0].descriptor == Descriptor{"Wavelength", "nm"});
  CHECK(agg.series[0].data == std::vector<std::string>{"1000.00", "999.00"});
  CHECK(agg.series[1].descriptor == Descriptor{"Reflectance", "exp"});
  CHECK(agg.series[1].data == std::vector<std::string>{"0.096500", "0.096100"});
  auto num = agg.series[1].numeric();
  CHECK(*num[0] == doctest::Approx(0.0965));
}

TEST_CASE("data document: encode keeps exact lexemes and round-trips") {
  auto doc = decode_data_document(testing::fixture("fig5_data.xml"));
  auto xml = encode_data_document(doc);
  CHECK(xml.find("<datum value=\"1000.00\"/>") != std::string::npos);
  CHECK(xml.find("<datum value=\"0.096500\"/>") != std::string::npos);
  CHECK(xml.find("<MetaData comments=\"RTnk\" units=\"-\" name=\"method\"/>") != std::string::npos);
  CHECK(decode_data_document(xml) == doc);
}

TEST_CASE("data document: zero aggregates is valid") {
  std::string doc = R"(<NCPVData role="archive" timestamp="2012-09-25T12:45:03" id="">
  <Characterization><Type name="t"/><Tool name="img"/><DataFileLink timestamp="2012-09-25T12:45:03" file="img/data/20120925/a.img"/></Characterization>
</NCPVData>)";
  auto d = decode_data_document(doc);
  CHECK(d.aggregates.empty());
  CHECK(decode_data_document(encode_data_document(d)) == d);
}

TEST_CASE("data document: series of differing lengths decode") {
  auto doc = testing::fixture("fig5_data.xml");
  doc = replace(doc, "<datum value=\"999.00\"/>", "<datum value=\"999.00\"/><datum value=\"998.00\"/>");
  auto d = decode_data_document(doc);
  CHECK(d.aggregates[0].series[0].data.size() == 3);
  CHECK(d.aggregates[0].series[1].data.size() == 2);
}

TEST_CASE("data document: empty comments round-trip") {
  auto d = decode_data_document(testing::fixture("fig5_data.xml"));
  d.comments.clear();
  auto xml = encode_data_document(d);
  CHECK((xml.find("<Comments/>") != std::string::npos || xml.find("<Comments></Comments>") != std::string::npos));
  CHECK(decode_data_document(xml) == d);
}

TEST_CASE("data document: series order is significant") {
  auto doc = testing::fixture("fig5_data.xml");
  auto d = decode_data_document(doc);
  auto swapped = d;
  std::swap(swapped.aggregates[0].series[0], swapped.aggregates[0].series[1]);
  CHECK_FALSE(decode_data_document(encode_data_document(swapped)) == d);
}

TEST_CASE("data document: unsafe file links are rejected") {
  auto doc = testing::fixture("fig5_data.xml");
  CHECK_THROWS_AS(decode_data_document(replace(doc, "file=\"nandk", "file=\"/nandk")), FormatError);
  CHECK_THROWS_AS(decode_data_document(replace(doc, "file=\"nandk", "file=\"../nandk")), FormatError);
  CHECK_FALSE(is_archive_relative("a/../b"));
  CHECK(is_archive_relative("a/..b/c"));
}

TEST_CASE("data document: unknown attributes and elements are preserved") {
  auto doc = testing::fixture("fig5_data.xml");
  doc = replace(doc, "<Aggregate>", "<Aggregate position=\"3\"><Stage tilt=\"2\">kept</Stage>");
  doc = replace(doc, "<Comments></Comments>", "<Comments></Comments><Instrument serial=\"77\"/>");
  auto d = decode_data_document(doc);
  CHECK(d.aggregates[0].extras.attributes.size() == 1);
  CHECK(d.aggregates[0].extras.elements.size() == 1);
  CHECK(d.block_extras.elements.size() == 1);
  auto xml = encode_data_document(d);
  CHECK(xml.find("<Stage tilt=\"2\">kept</Stage>") != std::string::npos);
  CHECK(xml.find("serial=\"77\"") != std::string::npos);
  CHECK(decode_data_document(xml) == d);
}

TEST_CASE("data document: processing variant uses Recipe") {
  auto d = decode_data_document(testing::fixture("fig5_data.xml"));
  d.kind = ToolKind::Processing;
  d.measurement_type = {4, "CIGS coevap recipe A"};
  auto xml = encode_data_document(d);
  CHECK(xml.find("<Processing>") != std::string::npos);
  CHECK(xml.find("<Recipe id=\"4\"") != std::string::npos);
  CHECK(decode_data_document(xml) == d);
}

namespace {

std::string random_lexeme(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_int_distribution<long long> n(-100000, 100000);
  switch (kind(rng)) {
    case 0: return std::to_string(n(rng));
    case 1: return std::to_string(n(rng)) + ".000";
    case 2: return "0." + std::to_string(std::abs(n(rng))) + "0";
    case 3: return "1.5e-" + std::to_string(std::abs(n(rng)) % 30);
    case 4: return "n/a";
    default: return "<&\"'>";
  }
}

std::string random_text(std::mt19937_64& rng) {
  static const std::string alphabet = "abcXYZ 019_-.&<>\"'\t\n/\xC3\xA9";
  std::uniform_int_distribution<std::size_t> len(0, 12), pick(0, alphabet.size() - 1);
  std::string s;
  auto l = len(rng);
  for (std::size_t i = 0; i < l; ++i) {
    char c = alphabet[pick(rng)];
    if (static_cast<unsigned char>(c) >= 0x80) {
      s += "\xC3\xA9";
    } else {
      s.push_back(c);
    }
  }
  return s;
}

DataDocument random_document(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> small(0, 4), coin(0, 1);
  DataDocument d;
  d.role = coin(rng) ? DocRole::archive : DocRole::readback;
  d.timestamp = Timestamp::from(TimePoint{std::chrono::seconds(1'000'000'000 + small(rng) * 86400)});
  d.doc_id = coin(rng) ? "" : "doc-" + std::to_string(small(rng));
  d.kind = coin(rng) ? ToolKind::Characterization : ToolKind::Processing;
  d.measurement_type = {coin(rng) ? std::optional<std::int64_t>(small(rng)) : std::nullopt, random_text(rng)};
  d.tool = {coin(rng) ? std::optional<std::int64_t>(23) : std::nullopt, "tool " + random_text(rng)};
  if (coin(rng)) d.operator_id = small(rng);
  d.data_file_link = {d.timestamp, "tool/data/20010101/f" + std::to_string(small(rng)) + ".txt"};
  d.comments = random_text(rng);
  int naggs = small(rng);
  for (int a = 0; a < naggs; ++a) {
    Aggregate agg;
    int nmeta = small(rng);
    for (int m = 0; m < nmeta; ++m) {
      MetaDatum md;
      md.name = "m" + std::to_string(m);
      if (coin(rng)) md.value = random_lexeme(rng);
      md.units = coin(rng) ? "-" : random_text(rng);
      if (coin(rng)) md.comments = random_text(rng);
      agg.metadata.push_back(std::move(md));
    }
    int nseries = small(rng);
    for (int s = 0; s < nseries; ++s) {
      DataSeries ds;
      ds.descriptor = {"s" + std::to_string(s), random_text(rng)};
      int len = small(rng) * small(rng);
      for (int i = 0; i < len; ++i) ds.data.push_back(random_lexeme(rng));
      agg.series.push_back(std::move(ds));
    }
    d.aggregates.push_back(std::move(agg));
  }
  return d;
}

}  // namespace

TEST_CASE("property: data documents round-trip through XML") {
  std::mt19937_64 rng(20130108);
  for (int i = 0; i < 300; ++i) {
    auto d = random_document(rng);
    auto xml = encode_data_document(d);
    auto back = decode_data_document(xml);
    REQUIRE(back == d);
    CHECK(encode_data_document(back) == xml);
  }
}

TEST_CASE("property: ops messages round-trip through XML") {
  std::mt19937_64 rng(5801);
  std::uniform_int_distribution<int> role(0, 5), coin(0, 1);
  for (int i = 0; i < 300; ++i) {
    OpsMessage m;
    m.role = static_cast<OpsRole>(role(rng));
    m.timestamp = Timestamp::from(TimePoint{std::chrono::seconds(1'008'581'447 + i)});
    if (is_command(m.role) || coin(rng)) {
      OpsTarget t;
      t.source_path = "/mnt/x/" + random_text(rng) + "f";
      t.source_host = random_text(rng);
      t.tool = {"tool" + random_text(rng), coin(rng) ? ToolKind::Processing : ToolKind::Characterization,
                coin(rng) ? std::optional<std::int64_t>(i) : std::nullopt};
      if (coin(rng)) t.sample_id = random_text(rng);
      if (coin(rng)) t.operator_username = random_text(rng);
      m.target = t;
    }
    if (m.role == OpsRole::ack || m.role == OpsRole::error) m.status = OpsStatus{"C" + std::to_string(i), random_text(rng)};
    auto back = decode_ops_message(encode_ops_message(m));
    REQUIRE(back == m);
  }
}

TEST_CASE("timestamps: ISO-8601 forms") {
  CHECK(Timestamp::parse("2001-12-17T09:30:47Z"));
  CHECK(Timestamp::parse("2012-09-25T12:45:03"));
  CHECK(Timestamp::parse("2012-09-25T12:45:03.123+02:00"));
  CHECK_FALSE(Timestamp::parse("2012-02-30T00:00:00Z"));
  CHECK_FALSE(Timestamp::parse("2012-09-25 12:45:03"));
  CHECK_FALSE(Timestamp::parse("2012-09-25T12:45:03Zjunk"));
  auto a = *Timestamp::parse("2012-09-25T12:45:03+02:00");
  auto b = *Timestamp::parse("2012-09-25T10:45:03Z");
  CHECK(a.instant() == b.instant());
  CHECK(yyyymmdd(b.instant()) == "20120925");
}
