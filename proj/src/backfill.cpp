#include "lims/backfill.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "lims/extractor.hpp"
#include "lims/harvester.hpp"
#include "lims/timestamp.hpp"

namespace lims {

namespace fs = std::filesystem;

namespace {

bool within(const fs::path& parent, const fs::path& child) {
  auto [p, c] = std::mismatch(parent.begin(), parent.end(), child.begin(), child.end());
  return p == parent.end() || (std::next(p) == parent.end() && p->empty());
}

const InstrumentMount* mount_for(const Config& config, const fs::path& root) {
  for (const auto& m : config.mounts)
    if (within(fs::weakly_canonical(m.root_path), root)) return &m;
  return nullptr;
}

bool hidden(const fs::path& rel) {
  return std::any_of(rel.begin(), rel.end(), [](const fs::path& part) { return part.string().starts_with("."); });
}

}  // namespace

nlohmann::json BackfillReport::to_json() const {
  auto items = [](const std::vector<BackfillItem>& v) {
    auto out = nlohmann::json::array();
    for (const auto& i : v) out.push_back({{"path", i.path}, {"reason", i.reason}});
    return out;
  };
  return {{"files_seen", files_seen},           {"extracted", extracted},
          {"skipped", skipped},                 {"errors", errors},
          {"skipped_files", items(skipped_files)}, {"failed_files", items(failed_files)}};
}

BackfillReport backfill(const Config& config, Store& store, const fs::path& root, const BackfillOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error("backfill root '" + root.string() + "' is not a directory");
  const auto canon_root = fs::weakly_canonical(root);
  const auto* mount = mount_for(config, canon_root);

  Harvester harvester(config, store);
  Extractor extractor(config, store);
  if (options.on_receipt) extractor.on_receipt(options.on_receipt);

  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(canon_root, fs::directory_options::skip_permission_denied);
       it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file(ec) && !hidden(fs::relative(it->path(), canon_root))) files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());

  BackfillReport report;
  for (const auto& file : files) {
    ++report.files_seen;
    const auto shown = fs::relative(file, canon_root).string();
    auto skip = [&](std::string reason) {
      ++report.skipped;
      report.skipped_files.push_back({shown, std::move(reason)});
    };

    OpsTarget target;
    const TranslationConfig* cfg = nullptr;
    if (options.tool) {
      cfg = config.find_tool(*options.tool);
    } else if (mount) {
      if (mount->matches(fs::relative(file, fs::weakly_canonical(mount->root_path))))
        cfg = config.find_tool(mount->tool.name);
    } else {
      auto it = std::find_if(config.tools.begin(), config.tools.end(),
                             [&](const TranslationConfig& t) { return t.matches(file.filename().string()); });
      if (it != config.tools.end()) cfg = &*it;
    }
    if (!cfg) {
      skip("no translation config for '" + file.filename().string() + "'");
      continue;
    }

    std::optional<HarvestLogEntry> entry;
    if (mount) {
      auto rel = fs::relative(file, fs::weakly_canonical(mount->root_path)).generic_string();
      target = OpsTarget{rel, mount->host_label, mount->tool, mount->sample_for(rel), mount->operator_username, {}};
      target.tool.name = cfg->tool_name;
      auto size = fs::file_size(file, ec);
      auto mtime = from_file_time(fs::last_write_time(file, ec));
      auto latest = store.log_latest(mount->instrument_name, rel);
      if (latest && latest->size == size && to_micros(latest->mtime) == to_micros(mtime)) {
        if (latest->progress >= 3) {
          skip("already extracted");
          continue;
        }
        entry = latest;
      } else {
        HarvestLogEntry e;
        e.instrument_name = mount->instrument_name;
        e.source_host = mount->host_label;
        e.source_path = rel;
        e.size = size;
        e.mtime = mtime;
        e.detected_at = Clock::now();
        if (latest) e.version = latest->version + 1;
        e.entry_id = store.log_insert(e);
        entry = e;
      }
    } else {
      target = OpsTarget{file.string(), "backfill", ToolInfo{cfg->tool_name, cfg->kind, std::nullopt}, std::nullopt,
                         std::nullopt, {}};
    }

    OpsMessage msg;
    msg.role = entry && entry->version > 1 ? OpsRole::update : OpsRole::transfer;
    msg.timestamp = Timestamp::now();
    msg.target = target;
    try {
      auto task = harvester.make_task(msg);
      task.priority = -1;
      auto outcome = harvester.execute_transfer(task);
      if (entry) store.log_update(entry->entry_id, LogStatus::Harvested, {std::nullopt, outcome.archive_path, {}});
      set_extra_attribute(target, kOriginHostAttr, target.source_host);
      set_extra_attribute(target, kOriginPathAttr, target.source_path);
      auto receipt = extractor.ingest(outcome.archive_path, target, outcome.swapped);
      if (entry) store.log_update(entry->entry_id, LogStatus::Extracted);
      if (receipt.unchanged) {
        skip("unchanged");
      } else {
        ++report.extracted;
      }
    } catch (const std::exception& e) {
      ++report.errors;
      report.failed_files.push_back({shown, e.what()});
      if (entry) store.log_update(entry->entry_id, LogStatus::Failed, {std::string(e.what()), {}, {}});
      spdlog::warn("backfill {}: {}", shown, e.what());
    }
  }
  return report;
}

}  // namespace lims
