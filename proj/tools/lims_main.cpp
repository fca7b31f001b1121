// lims: run the pipeline daemons, backfill, simulate instruments, plot.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <iostream>
#include <thread>

#include "lims/backfill.hpp"
#include "lims/plot.hpp"
#include "lims/runtime.hpp"
#include "lims/simulate.hpp"
#include "lims/store.hpp"

using namespace lims;

namespace {

constexpr int kFailure = 1;
constexpr int kConfigFailure = 2;

struct Options {
  std::string config_path;
  std::string log_level = "info";
  // run
  std::string mode = "all";
  bool ping = false;
  // backfill
  std::string root;
  std::string tool;
  // simulate
  std::string out_dir;
  double rate = 0;
  int count = 10;
  std::string rows = "5:20";
  std::uint64_t seed = 42;
  std::string prefix = "sim";
  std::string manifest;
  // plot
  std::vector<Id> file_ids;
  std::vector<std::string> traces;
  std::string out;
};

int cmd_config_check(const Config& cfg) {
  std::cout << "OK " << cfg.tools.size() << " tools, " << cfg.mounts.size() << " mounts, store "
            << cfg.store_path.string() << "\n";
  for (const auto& w : cfg.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

int cmd_run(const Config& cfg, const Options& o) {
  auto mode = parse_run_mode(o.mode);
  if (!mode) {
    std::cerr << "lims run: unknown mode '" << o.mode << "' (monitor, harvest, extract, serve, all)\n";
    return kConfigFailure;
  }
  ShutdownSignals signals;  // before any daemon thread exists
  Runtime runtime(cfg, *mode);
  runtime.start();
  std::cout << runtime.ready_line() << std::endl;
  if (o.ping) {
    bool ok = runtime.ping();
    std::cout << (ok ? "PING ok" : "PING failed") << std::endl;
    if (!ok) return kFailure;
  }
  int sig = signals.wait();
  spdlog::info("signal {}, shutting down", sig);
  runtime.stop();
  return 0;
}

int cmd_backfill(const Config& cfg, const Options& o) {
  Store store(cfg.store_path);
  BackfillOptions opts;
  if (!o.tool.empty()) opts.tool = o.tool;
  auto report = backfill(cfg, store, o.root, opts);
  std::cout << report.to_json().dump(2) << std::endl;
  return 0;
}

int cmd_simulate(const Config& cfg, const Options& o) {
  SimSpec spec;
  spec.tool = o.tool;
  spec.files_per_minute = o.rate;
  spec.count = o.count;
  spec.seed = o.seed;
  spec.prefix = o.prefix;
  spec.out_dir = o.out_dir;
  auto colon = o.rows.find(':');
  try {
    spec.min_rows = std::stoi(o.rows.substr(0, colon));
    spec.max_rows = colon == std::string::npos ? spec.min_rows : std::stoi(o.rows.substr(colon + 1));
  } catch (const std::exception&) {
    std::cerr << "lims simulate: --rows wants MIN:MAX, got '" << o.rows << "'\n";
    return kConfigFailure;
  }
  if (spec.min_rows < 1 || spec.max_rows < spec.min_rows) {
    std::cerr << "lims simulate: bad row range " << o.rows << "\n";
    return kConfigFailure;
  }
  ShutdownSignals signals;
  static std::atomic<bool> cancel{false};  // the waiter may outlive this frame
  std::thread waiter([signals]() mutable {
    signals.wait();
    cancel = true;
  });
  waiter.detach();
  auto manifest = simulate(cfg, spec, &cancel, [](const SimFile& f) { std::cout << f.path << std::endl; });
  if (!o.manifest.empty()) write_file_atomic(o.manifest, manifest.to_json().dump(1));
  return 0;
}

int cmd_plot(const Config& cfg, const Options& o) {
  Store store(cfg.store_path);
  auto result = plot(store, PlotSpec{o.file_ids, o.traces, o.out});
  std::cout << result.traces.size() << " traces -> " << result.svg_path.string() << ", " << result.csv_path.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laboratory data pipeline: monitor, harvest, extract, serve."};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "Configuration file (JSON)")->required();
  app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error, off");

  auto* run = app.add_subcommand("run", "Run daemons until SIGINT/SIGTERM");
  run->add_option("-m,--mode", o.mode, "monitor, harvest, extract, serve or all");
  run->add_flag("--ping", o.ping, "Send role=test to the harvester once ready");

  auto* bf = app.add_subcommand("backfill", "Archive and extract existing files under a directory");
  bf->add_option("root", o.root, "Directory to walk")->required();
  bf->add_option("--tool", o.tool, "Use this tool for every file");

  auto* sim = app.add_subcommand("simulate", "Write synthetic instrument files");
  sim->add_option("--tool", o.tool, "Tool whose translation config defines the format")->required();
  sim->add_option("--out", o.out_dir, "Target directory (usually a mount root)")->required();
  sim->add_option("--rate", o.rate, "Files per minute (0 = as fast as possible)");
  sim->add_option("--count", o.count, "Number of files");
  sim->add_option("--rows", o.rows, "Rows per aggregate, MIN:MAX");
  sim->add_option("--seed", o.seed, "Random seed");
  sim->add_option("--prefix", o.prefix, "File name prefix");
  sim->add_option("--manifest", o.manifest, "Write the value manifest here (JSON)");

  auto* pl = app.add_subcommand("plot", "Overlay stored series into an SVG chart and CSV table");
  pl->add_option("--file", o.file_ids, "File id (repeatable)")->required();
  pl->add_option("--trace", o.traces, "Keep only series with this descriptor name (repeatable)");
  pl->add_option("--out", o.out, "SVG output path; the CSV goes alongside")->required();

  auto* check = app.add_subcommand("config-check", "Validate the configuration and exit");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("lims");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(o.log_level));

  Config cfg;
  try {
    cfg = load_config(o.config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  }

  try {
    if (*check) return cmd_config_check(cfg);
    if (*run) return cmd_run(cfg, o);
    if (*bf) return cmd_backfill(cfg, o);
    if (*sim) return cmd_simulate(cfg, o);
    if (*pl) return cmd_plot(cfg, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
