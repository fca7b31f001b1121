#pragma once

// The viewer reduced to files: overlays stored series from one or more
// files into a static SVG chart plus a CSV table of the plotted points.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lims/store.hpp"

namespace lims {

class PlotError : public Error {
 public:
  enum class Kind { NoNumericSeries, UnknownFile };

  PlotError(Kind kind, const std::string& detail) : Error(detail), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// One y series against the first series of its aggregate.
struct PlotTrace {
  Id file_id = 0;
  int aggregate_index = 0;
  std::string label;  // legend text, names the file
  Descriptor x;
  Descriptor y;
  std::vector<std::pair<double, double>> points;
};

struct PlotSpec {
  std::vector<Id> file_ids;
  std::vector<std::string> traces;  // descriptor names to keep; empty = all
  std::filesystem::path out;        // .svg; the table goes next to it as .csv
};

struct PlotResult {
  std::vector<PlotTrace> traces;
  std::filesystem::path svg_path;
  std::filesystem::path csv_path;
};

/// Traces for the given files, in file then aggregate then column order.
/// Throws UnknownFile, or NoNumericSeries when nothing is plottable.
std::vector<PlotTrace> collect_traces(Store& store, const std::vector<Id>& file_ids,
                                      const std::vector<std::string>& filter = {});

/// "Wavelength (nm)"
std::string axis_label(const Descriptor& d);
std::string render_svg(const std::vector<PlotTrace>& traces);
/// Long format: file_id,aggregate,trace,x,y
std::string render_csv(const std::vector<PlotTrace>& traces);

PlotResult plot(Store& store, const PlotSpec& spec);

}  // namespace lims
