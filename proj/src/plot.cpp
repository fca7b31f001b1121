#include "lims/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <tuple>

#include "lims/xml.hpp"

namespace lims {

namespace {

Descriptor descriptor_of(const DataArray& a) {
  return {a.descriptors.size() > 0 ? a.descriptors[0] : "", a.descriptors.size() > 1 ? a.descriptors[1] : ""};
}

std::string num(double v, int digits = 6) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (lo == hi) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string axis_label(const Descriptor& d) { return d.units.empty() ? d.name : d.name + " (" + d.units + ")"; }

std::vector<PlotTrace> collect_traces(Store& store, const std::vector<Id>& file_ids,
                                      const std::vector<std::string>& filter) {
  std::vector<PlotTrace> out;
  for (Id id : file_ids) {
    auto summary = store.file_summaries({id});
    if (summary.empty()) throw PlotError(PlotError::Kind::UnknownFile, "file " + std::to_string(id) + " not found");
    auto name = std::filesystem::path(summary[0].archive_path).filename().string();
    auto arrays = store.arrays(id);
    std::stable_sort(arrays.begin(), arrays.end(), [](const DataArray& a, const DataArray& b) {
      return std::tie(a.aggregate_index, a.position) < std::tie(b.aggregate_index, b.position);
    });
    bool multi = std::any_of(arrays.begin(), arrays.end(),
                             [&](const DataArray& a) { return a.aggregate_index != arrays[0].aggregate_index; });
    for (std::size_t i = 0; i < arrays.size();) {
      std::size_t j = i;
      while (j < arrays.size() && arrays[j].aggregate_index == arrays[i].aggregate_index) ++j;
      const auto& xs = arrays[i];
      for (std::size_t k = i + 1; k < j; ++k) {
        const auto& ys = arrays[k];
        auto yd = descriptor_of(ys);
        if (!filter.empty() && std::find(filter.begin(), filter.end(), yd.name) == filter.end()) continue;
        PlotTrace t{id, ys.aggregate_index, {}, descriptor_of(xs), yd, {}};
        for (std::size_t r = 0; r < std::min(xs.values.size(), ys.values.size()); ++r)
          if (xs.values[r] && ys.values[r]) t.points.emplace_back(*xs.values[r], *ys.values[r]);
        if (t.points.empty()) continue;
        t.label = "file " + std::to_string(id) + " " + name;
        if (multi) t.label += " [" + std::to_string(ys.aggregate_index) + "]";
        t.label += ": " + yd.name;
        out.push_back(std::move(t));
      }
      i = j;
    }
  }
  if (out.empty()) throw PlotError(PlotError::Kind::NoNumericSeries, "no numeric series to plot");
  return out;
}

std::string render_svg(const std::vector<PlotTrace>& traces) {
  constexpr double kWidth = 800, kHeight = 500, kLeft = 80, kRight = 220, kTop = 30, kBottom = 60;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  Range xr, yr;
  for (const auto& t : traces)
    for (auto [x, y] : t.points) {
      xr.add(x);
      yr.add(y);
    }
  xr.pad();
  yr.pad();
  auto sx = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  xml::Element svg{"svg", {}, {}};
  svg.set_attribute("xmlns", "http://www.w3.org/2000/svg");
  svg.set_attribute("width", num(kWidth));
  svg.set_attribute("height", num(kHeight));
  svg.set_attribute("font-family", "sans-serif");
  svg.set_attribute("font-size", "12");

  auto line = [](xml::Element& parent, double x1, double y1, double x2, double y2) {
    auto& l = parent.add_child("line");
    l.set_attribute("x1", num(x1));
    l.set_attribute("y1", num(y1));
    l.set_attribute("x2", num(x2));
    l.set_attribute("y2", num(y2));
    l.set_attribute("stroke", "black");
  };
  auto text = [](xml::Element& parent, double x, double y, const std::string& s, const char* anchor) {
    auto& e = parent.add_child("text");
    e.set_attribute("x", num(x));
    e.set_attribute("y", num(y));
    e.set_attribute("text-anchor", anchor);
    e.add_text(s);
    return &e;
  };

  auto& axes = svg.add_child("g");
  axes.set_attribute("class", "axes");
  line(axes, kLeft, kTop + ph, kLeft + pw, kTop + ph);
  line(axes, kLeft, kTop, kLeft, kTop + ph);
  for (int i = 0; i <= 5; ++i) {
    double fx = xr.lo + (xr.hi - xr.lo) * i / 5, fy = yr.lo + (yr.hi - yr.lo) * i / 5;
    line(axes, sx(fx), kTop + ph, sx(fx), kTop + ph + 5);
    text(axes, sx(fx), kTop + ph + 18, num(fx), "middle");
    line(axes, kLeft - 5, sy(fy), kLeft, sy(fy));
    text(axes, kLeft - 8, sy(fy) + 4, num(fy), "end");
  }

  const auto& x0 = traces.front().x;
  bool same_y = std::all_of(traces.begin(), traces.end(), [&](const PlotTrace& t) { return t.y == traces.front().y; });
  text(axes, kLeft + pw / 2, kHeight - 15, axis_label(x0), "middle")->set_attribute("class", "x-label");
  auto* ylab = text(axes, 20, kTop + ph / 2, same_y ? axis_label(traces.front().y) : "Value", "middle");
  ylab->set_attribute("class", "y-label");
  ylab->set_attribute("transform", "rotate(-90 20 " + num(kTop + ph / 2) + ")");

  // Built aside: adding traces to `svg` would invalidate references into it.
  xml::Element legend{"g", {}, {}};
  legend.set_attribute("class", "legend");
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (auto [x, y] : t.points) pts += (pts.empty() ? "" : " ") + num(sx(x)) + "," + num(sy(y));
    auto& pl = svg.add_child("polyline");
    pl.set_attribute("class", "trace");
    pl.set_attribute("fill", "none");
    pl.set_attribute("stroke", color);
    pl.set_attribute("points", pts);
    pl.add_child("title").add_text(t.label);

    double ly = kTop + 10 + 18 * static_cast<double>(i);
    auto& swatch = legend.add_child("rect");
    swatch.set_attribute("x", num(kLeft + pw + 15));
    swatch.set_attribute("y", num(ly - 9));
    swatch.set_attribute("width", "12");
    swatch.set_attribute("height", "12");
    swatch.set_attribute("fill", color);
    text(legend, kLeft + pw + 32, ly + 1, t.label, "start");
  }
  svg.children.push_back(xml::Node{std::move(legend)});
  return xml::write(svg);
}

std::string render_csv(const std::vector<PlotTrace>& traces) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::string out = "file_id,aggregate,trace,x,y\n";
  for (const auto& t : traces)
    for (auto [x, y] : t.points)
      out += std::to_string(t.file_id) + "," + std::to_string(t.aggregate_index) + "," + quote(t.label) + "," +
             num(x, 15) + "," + num(y, 15) + "\n";
  return out;
}

PlotResult plot(Store& store, const PlotSpec& spec) {
  PlotResult r;
  r.traces = collect_traces(store, spec.file_ids, spec.traces);
  r.svg_path = spec.out;
  r.csv_path = std::filesystem::path(spec.out).replace_extension(".csv");
  if (r.svg_path.has_parent_path()) std::filesystem::create_directories(r.svg_path.parent_path());
  write_file_atomic(r.svg_path, render_svg(r.traces));
  write_file_atomic(r.csv_path, render_csv(r.traces));
  return r;
}

}  // namespace lims
