#pragma once

// Post-processing of historical files: every matching file under a root
// goes through the same archive and extraction steps as live data.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lims/config.hpp"
#include "lims/store.hpp"

namespace lims {

struct BackfillItem {
  std::string path;  // as found under the root
  std::string reason;
};

struct BackfillReport {
  std::size_t files_seen = 0;
  std::size_t extracted = 0;
  std::size_t skipped = 0;
  std::size_t errors = 0;
  std::vector<BackfillItem> skipped_files;
  std::vector<BackfillItem> failed_files;

  nlohmann::json to_json() const;
};

struct BackfillOptions {
  /// Force a tool for every file instead of matching by name or mount.
  std::optional<std::string> tool;
  std::function<void(const ExtractionReceipt&)> on_receipt;
};

/// Runs in-process. When `root` lies inside a configured mount, files get
/// transaction-log entries under that instrument like live ones. Per-file
/// errors are reported, never thrown; re-running adds nothing.
BackfillReport backfill(const Config& config, Store& store, const std::filesystem::path& root,
                        const BackfillOptions& options = {});

}  // namespace lims
