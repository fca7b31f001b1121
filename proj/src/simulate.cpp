#include "lims/simulate.hpp"

#include <cstdio>
#include <random>
#include <regex>
#include <thread>

#include "lims/timestamp.hpp"

namespace lims {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string extension_for(const TranslationConfig& cfg) {
  for (const auto& p : cfg.match_patterns) {
    if (p.rfind("*.", 0) == 0 && p.find_first_of("*?[", 2) == std::string::npos) return p.substr(1);
  }
  return ".dat";
}

// Header keys we know how to fill, tried against the tool's rules.
const std::vector<std::pair<std::string, std::string>>& header_candidates() {
  static const std::vector<std::pair<std::string, std::string>> kKeys = {
      {"device", "D"}, {"method", "sim"}, {"x", "0.0000"}, {"y", "0.0000"}, {"sample", "S"}};
  return kKeys;
}

}  // namespace

std::string render_sim_file(const TranslationConfig& cfg, std::uint64_t seed, int index, int min_rows, int max_rows,
                            SimFile& record) {
  std::mt19937_64 rng(seed * 1'000'003ULL + static_cast<std::uint64_t>(index));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int span = std::max(0, max_rows - min_rows);
  const int rows = min_rows + static_cast<int>(rng() % static_cast<std::uint64_t>(span + 1));
  record.aggregates.clear();

  if (cfg.format == FileFormat::BinaryOpaque) {
    std::string bytes(static_cast<std::size_t>(rows) * 32, '\0');
    for (auto& c : bytes) c = static_cast<char>(rng() & 0xff);
    return bytes;
  }

  const char delim = cfg.delimiter.canonical();
  const int aggregates = cfg.aggregate_rule == AggregateRule::SplitOnBlankLine ? 1 + static_cast<int>(rng() % 3) : 1;
  std::string out;
  for (int i = 0; i < cfg.skip_lines; ++i) out += "# " + cfg.tool_name + " simulated output, file " + std::to_string(index) + "\n";
  for (int a = 0; a < aggregates; ++a) {
    if (a) out += "\n";
    if (cfg.format == FileFormat::HeaderPlusColumns) {
      for (const auto& [key, value] : header_candidates()) {
        bool wanted = std::any_of(cfg.header_rules.begin(), cfg.header_rules.end(),
                                  [&](const HeaderRule& r) { return std::regex_search(key, r.key_regex); });
        if (!wanted) continue;
        auto v = value;
        if (key == "device") v += std::to_string(a + 1);
        if (key == "sample") v += std::to_string(index);
        out += key + ": " + v + "\n";
      }
    }
    std::vector<SimColumn> cols;
    for (const auto& c : cfg.columns) cols.push_back({c.name, c.units, {}});
    const double start = uniform(-1.0, 1000.0);
    const double step = uniform(0.01, 2.0);
    for (int r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        auto lexeme = c == 0 ? fixed(start + r * step, 2) : fixed(uniform(-1.0, 1.0), 6);
        if (c) out += delim;
        out += lexeme;
        cols[c].values.push_back(std::move(lexeme));
      }
      out += "\n";
    }
    record.aggregates.push_back(std::move(cols));
  }
  return out;
}

SimManifest simulate(const Config& config, const SimSpec& spec, const std::atomic<bool>* cancel,
                     const std::function<void(const SimFile&)>& on_emit) {
  const auto* cfg = config.find_tool(spec.tool);
  if (!cfg) throw ConfigError("no translation config for tool '" + spec.tool + "'");
  std::filesystem::create_directories(spec.out_dir);
  SimManifest manifest;
  manifest.tool = spec.tool;
  manifest.seed = spec.seed;
  const auto ext = extension_for(*cfg);
  const auto start = std::chrono::steady_clock::now();
  const auto interval = spec.files_per_minute > 0 ? std::chrono::duration<double>(60.0 / spec.files_per_minute)
                                                  : std::chrono::duration<double>(0);
  for (int i = 0; i < spec.count; ++i) {
    auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval * i);
    while (std::chrono::steady_clock::now() < due) {
      if (cancel && *cancel) return manifest;
      std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
          due - std::chrono::steady_clock::now(), std::chrono::milliseconds(50)));
    }
    if (cancel && *cancel) return manifest;
    SimFile f;
    char num[16];
    std::snprintf(num, sizeof num, "%04d", i);
    f.path = spec.prefix + "_" + std::to_string(spec.seed) + "_" + num + ext;
    auto bytes = render_sim_file(*cfg, spec.seed, i, spec.min_rows, spec.max_rows, f);
    f.size = bytes.size();
    write_file_atomic(spec.out_dir / f.path, bytes);
    f.emitted_at = Clock::now();
    if (on_emit) on_emit(f);
    manifest.files.push_back(std::move(f));
  }
  return manifest;
}

json SimManifest::to_json() const {
  json files_j = json::array();
  for (const auto& f : files) {
    json aggs = json::array();
    for (const auto& a : f.aggregates) {
      json cols = json::array();
      for (const auto& c : a) cols.push_back({{"name", c.name}, {"units", c.units}, {"values", c.values}});
      aggs.push_back(std::move(cols));
    }
    files_j.push_back({{"path", f.path},
                       {"size", f.size},
                       {"emitted_at", Timestamp::from_precise(f.emitted_at).str()},
                       {"aggregates", std::move(aggs)}});
  }
  return json{{"tool", tool}, {"seed", seed}, {"files", std::move(files_j)}};
}

SimManifest SimManifest::from_json(const json& j) {
  SimManifest m;
  m.tool = j.at("tool").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& fj : j.at("files")) {
    SimFile f;
    f.path = fj.at("path").get<std::string>();
    f.size = fj.at("size").get<std::uint64_t>();
    if (auto ts = Timestamp::parse(fj.at("emitted_at").get<std::string>())) f.emitted_at = ts->instant();
    for (const auto& aj : fj.at("aggregates")) {
      std::vector<SimColumn> cols;
      for (const auto& cj : aj)
        cols.push_back({cj.at("name").get<std::string>(), cj.at("units").get<std::string>(),
                        cj.at("values").get<std::vector<std::string>>()});
      f.aggregates.push_back(std::move(cols));
    }
    m.files.push_back(std::move(f));
  }
  return m;
}

}  // namespace lims
