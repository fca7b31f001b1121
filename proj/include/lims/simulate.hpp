#pragma once

// Deterministic stand-in for an instrument: writes files in a tool's
// configured format into a mount directory at a given rate, and records
// every emitted value in a manifest for end-to-end checks.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lims/config.hpp"

namespace lims {

struct SimSpec {
  std::string tool;
  double files_per_minute = 0;  // 0 = no pacing
  int count = 10;
  int min_rows = 5;
  int max_rows = 20;
  std::uint64_t seed = 42;
  std::filesystem::path out_dir;
  std::string prefix = "sim";
};

struct SimColumn {
  std::string name;
  std::string units;
  std::vector<std::string> values;  // lexemes as written
};

struct SimFile {
  std::string path;  // relative to out_dir
  std::vector<std::vector<SimColumn>> aggregates;
  std::uint64_t size = 0;
  TimePoint emitted_at;
};

struct SimManifest {
  std::string tool;
  std::uint64_t seed = 0;
  std::vector<SimFile> files;

  nlohmann::json to_json() const;
  static SimManifest from_json(const nlohmann::json& j);
};

/// File content for one simulated file; pure function of (cfg, seed, index).
std::string render_sim_file(const TranslationConfig& cfg, std::uint64_t seed, int index, int min_rows, int max_rows,
                            SimFile& record);

/// Writes `spec.count` files (atomically, via rename) and returns the manifest.
SimManifest simulate(const Config& config, const SimSpec& spec, const std::atomic<bool>* cancel = nullptr,
                     const std::function<void(const SimFile&)>& on_emit = {});

}  // namespace lims
