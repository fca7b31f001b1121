#include <doctest.h>

#include "lims/extractor.hpp"
#include "lims/plot.hpp"
#include "lims/xml.hpp"
#include "support.hpp"

using namespace lims;

namespace {

const char* kConfig = R"json({
  "store_path": "lims.db",
  "harvester": {"archive_root": "archive", "backup_root": "backup"},
  "tools": [
    {"name": "N and K", "translation": {"match_patterns": ["*.1"], "format": "DelimitedColumns",
      "columns": [{"name": "Wavelength", "units": "nm"}, {"name": "Reflectance", "units": "exp"},
                  {"name": "Transmission", "units": "exp"}]}},
    {"name": "SEM", "translation": {"match_patterns": ["*.img"], "format": "BinaryOpaque"}}
  ]
})json";

struct Fixture {
  testing::TempDir dir;
  Config config = parse_config(kConfig, dir.path());
  Store store{":memory:"};
  Extractor extractor{config, store};

  Id load(const DataDocument& doc) {
    ExtractContext ctx;
    ctx.original_path = doc.data_file_link.file;
    ctx.file_timestamp = doc.data_file_link.timestamp.instant();
    ctx.content_hash = doc.data_file_link.file;
    return extractor.extract(doc, *config.find_tool(doc.tool.name), ctx).file_id;
  }
  Id load_text(const std::string& tool, const std::string& path, const std::string& body) {
    TranslationContext tc;
    tc.tool = ToolInfo{tool, ToolKind::Characterization, std::nullopt};
    tc.archive_path = path;
    tc.file_name = path;
    return load(translate(body, *config.find_tool(tool), tc).doc);
  }
};

std::vector<const xml::Element*> find_all(const xml::Element& e, std::string_view name, std::string_view cls = {}) {
  std::vector<const xml::Element*> out;
  for (const auto* c : e.elements()) {
    auto* a = c->attribute("class");
    if (c->name == name && (cls.empty() || (a && *a == cls))) out.push_back(c);
    for (const auto* d : find_all(*c, name, cls)) out.push_back(d);
  }
  return out;
}

}  // namespace

TEST_CASE("Fig 5 file plots Reflectance against Wavelength") {
  Fixture f;
  auto doc = decode_data_document(testing::fixture("fig5_data.xml"));
  doc.tool.name = "N and K";
  Id id = f.load(doc);
  auto r = plot(f.store, {{id}, {}, f.dir / "out" / "fig5.svg"});
  REQUIRE(r.traces.size() == 1);
  CHECK(r.traces[0].x == Descriptor{"Wavelength", "nm"});
  CHECK(r.traces[0].y == Descriptor{"Reflectance", "exp"});
  CHECK(r.traces[0].points == std::vector<std::pair<double, double>>{{1000.0, 0.0965}, {999.0, 0.0961}});

  auto svg = xml::parse(read_file(r.svg_path));
  CHECK(svg.name == "svg");
  auto xl = find_all(svg, "text", "x-label");
  REQUIRE(xl.size() == 1);
  CHECK(xl[0]->text() == "Wavelength (nm)");
  CHECK(find_all(svg, "text", "y-label")[0]->text() == "Reflectance (exp)");
  CHECK(find_all(svg, "polyline", "trace").size() == 1);

  auto csv = split_lines(read_file(r.csv_path));
  REQUIRE(csv.size() == 3);
  CHECK(csv[0] == "file_id,aggregate,trace,x,y");
  CHECK(csv[1].ends_with(",1000,0.0965"));
  CHECK(csv[2].ends_with(",999,0.0961"));
}

TEST_CASE("trace filter and overlays") {
  Fixture f;
  Id a = f.load_text("N and K", "nk/a.1", "500 0.1 0.8\n510 0.2 0.7\n");
  Id b = f.load_text("N and K", "nk/b.1", "500 0.3 0.6\n510 0.4 0.5\n");

  CHECK(collect_traces(f.store, {a}).size() == 2);
  auto only = collect_traces(f.store, {a}, {"Reflectance"});
  REQUIRE(only.size() == 1);
  CHECK(only[0].y.name == "Reflectance");

  auto r = plot(f.store, {{a, b}, {"Reflectance"}, f.dir / "overlay.svg"});
  REQUIRE(r.traces.size() == 2);
  CHECK(r.traces[0].label.find("a.1") != std::string::npos);
  CHECK(r.traces[1].label.find("b.1") != std::string::npos);
  CHECK(r.traces[0].label.find(std::to_string(a)) != std::string::npos);
  auto svg = xml::parse(read_file(r.svg_path));
  CHECK(find_all(svg, "polyline", "trace").size() == 2);
  auto legend = find_all(svg, "g", "legend");
  REQUIRE(legend.size() == 1);
  CHECK(find_all(*legend[0], "text").size() == 2);
}

TEST_CASE("nothing numeric to plot") {
  Fixture f;
  Id a = f.load_text("N and K", "nk/a.1", "500 0.1 0.8\n");
  CHECK_THROWS_AS(collect_traces(f.store, {a}, {"Absorbance"}), PlotError);
  try {
    collect_traces(f.store, {a}, {"Absorbance"});
  } catch (const PlotError& e) {
    CHECK(e.kind() == PlotError::Kind::NoNumericSeries);
  }
  Id img = f.load_text("SEM", "sem/x.img", std::string("\x89PNG\0\1", 6));
  CHECK_THROWS_AS(collect_traces(f.store, {img}), PlotError);
  try {
    collect_traces(f.store, {9999});
  } catch (const PlotError& e) {
    CHECK(e.kind() == PlotError::Kind::UnknownFile);
  }
}
