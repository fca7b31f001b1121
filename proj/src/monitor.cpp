#include "lims/monitor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace lims {

namespace fs = std::filesystem;

namespace {

// The log keeps microseconds; compare at that resolution.
TimePoint truncate(TimePoint t) { return from_micros(to_micros(t)); }

bool differs(const HarvestLogEntry& e, const MountFile& f) { return e.size != f.size || e.mtime != f.mtime; }

FileEvent event_for(const MountFile& f, const std::optional<HarvestLogEntry>& latest) {
  FileEvent ev;
  ev.source_path = f.path;
  ev.size = f.size;
  ev.mtime = f.mtime;
  if (latest) {
    ev.kind = FileEventKind::Updated;
    ev.previous_size = latest->size;
  }
  return ev;
}

}  // namespace

std::vector<MountFile> list_mount(const InstrumentMount& mount) {
  auto unavailable = [&](const std::string& why) {
    return MonitorError(MonitorError::Kind::MountUnavailable,
                        "mount '" + mount.instrument_name + "' unavailable: " + why);
  };
  std::error_code ec;
  if (!fs::is_directory(mount.root_path, ec)) throw unavailable(mount.root_path.string() + " is not a directory");
  std::vector<MountFile> out;
  try {
    for (fs::recursive_directory_iterator it(mount.root_path, fs::directory_options::skip_permission_denied), end;
         it != end; ++it) {
      std::error_code fe;
      if (!it->is_regular_file(fe)) continue;
      auto rel = fs::relative(it->path(), mount.root_path);
      if (!mount.matches(rel)) continue;
      MountFile f;
      f.path = rel.generic_string();
      f.size = it->file_size(fe);
      if (fe) continue;  // vanished between listing and stat
      auto t = it->last_write_time(fe);
      if (fe) continue;
      f.mtime = truncate(from_file_time(t));
      out.push_back(std::move(f));
    }
  } catch (const fs::filesystem_error& e) {
    throw unavailable(e.what());
  }
  std::sort(out.begin(), out.end(), [](const MountFile& a, const MountFile& b) { return a.path < b.path; });
  return out;
}

std::vector<FileEvent> scan(const InstrumentMount& mount, Store& log, StabilityState* stability) {
  auto files = list_mount(mount);
  std::vector<FileEvent> events;
  StabilityState seen;
  for (const auto& f : files) {
    seen[f.path] = f;
    if (stability) {
      auto it = stability->find(f.path);
      if (it == stability->end() || it->second != f) continue;  // still settling
    }
    auto latest = log.log_latest(mount.instrument_name, f.path);
    if (!latest || differs(*latest, f)) events.push_back(event_for(f, latest));
  }
  if (stability) *stability = std::move(seen);
  return events;
}

std::vector<FileEvent> reconcile(const InstrumentMount& mount, Store& log, std::chrono::milliseconds staleness,
                                 TimePoint now) {
  std::vector<FileEvent> events;
  for (const auto& f : list_mount(mount)) {
    auto latest = log.log_latest(mount.instrument_name, f.path);
    if (!latest || differs(*latest, f)) {
      events.push_back(event_for(f, latest));
      continue;
    }
    if (latest->status == LogStatus::Extracted) continue;
    if (now - latest->updated_at < staleness) continue;
    FileEvent ev;
    ev.kind = latest->version > 1 ? FileEventKind::Updated : FileEventKind::New;
    ev.source_path = f.path;
    ev.size = f.size;
    ev.mtime = f.mtime;
    ev.entry_id = latest->entry_id;
    events.push_back(std::move(ev));
  }
  return events;
}

// ---- Monitor ---------------------------------------------------------------

Monitor::Monitor(const Config& config, Store& store, net::Endpoint harvester)
    : config_(config), store_(store), harvester_(std::move(harvester)) {
  timeouts_.connect = std::chrono::milliseconds(2'000);
  timeouts_.frame.max_frame_size = config.harvester.max_frame_size;
  timeouts_.frame.header_timeout = config.harvester.header_timeout;
  timeouts_.frame.body_timeout = config.harvester.body_timeout;
}

Monitor::~Monitor() { stop(); }

std::vector<FileEvent> Monitor::scan(const InstrumentMount& mount) {
  if (!config_.monitor.require_stable_scans) return lims::scan(mount, store_);
  StabilityState state;
  {
    std::lock_guard lock(mu_);
    state = stability_[mount.instrument_name];
  }
  auto events = lims::scan(mount, store_, &state);
  std::lock_guard lock(mu_);
  stability_[mount.instrument_name] = std::move(state);
  return events;
}

HarvestLogEntry Monitor::notify(const FileEvent& event, const InstrumentMount& mount) {
  std::optional<HarvestLogEntry> entry;
  if (event.entry_id) entry = store_.log_entry(*event.entry_id);
  if (!entry) {
    HarvestLogEntry e;
    e.instrument_name = mount.instrument_name;
    e.source_host = mount.host_label;
    e.source_path = event.source_path;
    e.size = event.size;
    e.mtime = event.mtime;
    e.detected_at = Clock::now();
    if (auto latest = store_.log_latest(mount.instrument_name, event.source_path)) e.version = latest->version + 1;
    e.entry_id = store_.log_insert(e);
    entry = store_.log_entry(e.entry_id);
  }
  return announce(*entry, event, mount);
}

HarvestLogEntry Monitor::announce(const HarvestLogEntry& entry, const FileEvent& event, const InstrumentMount& mount) {
  OpsMessage msg;
  msg.role = entry.version > 1 ? OpsRole::update : OpsRole::transfer;
  msg.timestamp = Timestamp::now();
  msg.target = OpsTarget{entry.source_path, mount.host_label, mount.tool, mount.sample_for(entry.source_path),
                         mount.operator_username, {}};

  std::optional<std::string> failure;
  try {
    auto reply = net::request(harvester_, msg, timeouts_);
    if (reply.role == OpsRole::ack) {
      if (reply.status && reply.status->code != "OK")
        spdlog::warn("harvester accepted {} with {}: {}", entry.source_path, reply.status->code, reply.status->detail);
    } else {
      failure = reply.status ? reply.status->code + ": " + reply.status->detail : "error reply";
    }
  } catch (const net::TransportError& e) {
    failure = std::string(to_string(e.code()));
    spdlog::debug("announce {} failed: {}", entry.source_path, e.what());
  } catch (const std::exception& e) {
    failure = e.what();
  }

  std::lock_guard lock(mu_);
  auto& pending = retries_[mount.instrument_name];
  auto it = std::find_if(pending.begin(), pending.end(), [&](const Retry& r) { return r.entry_id == entry.entry_id; });
  if (!failure) {
    if (it != pending.end()) pending.erase(it);
    return store_.log_update(entry.entry_id, LogStatus::Notified);
  }
  auto updated = store_.log_update(entry.entry_id, LogStatus::Failed, {failure, {}, {}});
  if (it == pending.end()) it = pending.insert(pending.end(), Retry{entry.entry_id, event, 0, {}});
  ++it->failures;
  auto delay = config_.monitor.retry_initial * (1LL << std::min(it->failures - 1, 20));
  it->due = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::min<std::chrono::milliseconds>(delay, config_.monitor.retry_max));
  it->event.entry_id = entry.entry_id;
  spdlog::warn("announce of {}:{} failed ({}); retry #{} scheduled", mount.host_label, entry.source_path, *failure,
               it->failures);
  return updated;
}

void Monitor::run_retries(const InstrumentMount& mount) {
  std::vector<Retry> due;
  {
    std::lock_guard lock(mu_);
    auto now = Clock::now();
    for (const auto& r : retries_[mount.instrument_name])
      if (r.due <= now) due.push_back(r);
  }
  for (const auto& r : due) {
    auto entry = store_.log_entry(r.entry_id);
    if (!entry || (entry->status != LogStatus::Failed && entry->progress >= 1)) {
      std::lock_guard lock(mu_);
      std::erase_if(retries_[mount.instrument_name], [&](const Retry& x) { return x.entry_id == r.entry_id; });
      continue;
    }
    announce(*entry, r.event, mount);
  }
}

std::size_t Monitor::pending_retries() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, v] : retries_) n += v.size();
  return n;
}

void Monitor::poll_once(const InstrumentMount& mount) {
  run_retries(mount);
  std::vector<FileEvent> events;
  try {
    events = scan(mount);
  } catch (const MonitorError& e) {
    std::lock_guard lock(mu_);
    if (!offline_[mount.instrument_name]) spdlog::warn("{}", e.what());
    offline_[mount.instrument_name] = true;
    return;
  }
  {
    std::lock_guard lock(mu_);
    if (offline_[mount.instrument_name]) spdlog::info("mount '{}' is back", mount.instrument_name);
    offline_[mount.instrument_name] = false;
  }
  for (const auto& ev : events) notify(ev, mount);
}

void Monitor::reconcile_once(const InstrumentMount& mount) {
  std::vector<FileEvent> events;
  try {
    events = lims::reconcile(mount, store_, config_.monitor.staleness);
  } catch (const MonitorError& e) {
    spdlog::warn("reconcile skipped: {}", e.what());
    return;
  }
  for (const auto& ev : events) {
    if (ev.entry_id) {
      std::lock_guard lock(mu_);
      const auto& pending = retries_[mount.instrument_name];
      if (std::any_of(pending.begin(), pending.end(), [&](const Retry& r) { return r.entry_id == *ev.entry_id; }))
        continue;  // already on its own backoff schedule
    }
    notify(ev, mount);
  }
}

void Monitor::mount_loop(const InstrumentMount& mount) {
  auto last_reconcile = Clock::now();
  try {
    reconcile_once(mount);
  } catch (const std::exception& e) {
    spdlog::error("reconcile of '{}': {}", mount.instrument_name, e.what());
  }
  while (running_) {
    try {
      poll_once(mount);
      if (Clock::now() - last_reconcile >= config_.monitor.reconcile_interval) {
        last_reconcile = Clock::now();
        reconcile_once(mount);
      }
    } catch (const std::exception& e) {
      spdlog::error("monitor '{}': {}", mount.instrument_name, e.what());
    }
    std::unique_lock lock(mu_);
    wake_.wait_for(lock, mount.poll_interval, [&] { return !running_; });
  }
}

void Monitor::start() {
  if (running_.exchange(true)) return;
  for (const auto& m : config_.mounts) loops_.emplace_back([this, &m] { mount_loop(m); });
  spdlog::info("monitoring {} mount(s), announcing to {}:{}", config_.mounts.size(), harvester_.host, harvester_.port);
}

void Monitor::stop() {
  {
    std::lock_guard lock(mu_);
    if (!running_.exchange(false)) return;
  }
  wake_.notify_all();
  for (auto& t : loops_)
    if (t.joinable()) t.join();
  loops_.clear();
}

}  // namespace lims
