#include "lims/harvester.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include <unistd.h>

#include "lims/extractor.hpp"
#include "lims/timestamp.hpp"

namespace lims {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

std::string tool_slug(std::string_view tool_name) {
  std::string out;
  out.reserve(tool_name.size());
  for (unsigned char c : tool_name) out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
  return out;
}

std::string archive_path(std::string_view tool_name, std::string_view file_name, std::string_view yyyymmdd,
                         const ArchiveView& existing, const std::string& content_hash) {
  const std::string base = tool_slug(tool_name) + "/data/" + std::string(yyyymmdd) + "/" + std::string(file_name);
  for (int k = 1;; ++k) {
    auto candidate = k == 1 ? base : base + ".v" + std::to_string(k);
    auto held = existing(candidate);
    if (!held || *held == content_hash) return candidate;
  }
}

std::string archive_date(TimePoint mtime, TimePoint now) {
  static const TimePoint kFloor = Timestamp::parse("1990-01-01T00:00:00Z")->instant();
  if (mtime < kFloor || mtime > now + 24h) return yyyymmdd(now);
  return yyyymmdd(mtime);
}

// ---- TokenBucket -----------------------------------------------------------

TokenBucket::TokenBucket(double rate_bytes_per_sec, double capacity)
    : rate_(rate_bytes_per_sec), capacity_(capacity), tokens_(capacity), last_(Steady::now()) {}

void TokenBucket::refill() {
  auto now = Steady::now();
  double dt = std::chrono::duration<double>(now - last_).count();
  last_ = now;
  tokens_ = std::min(capacity_, tokens_ + dt * rate_);
}

double TokenBucket::available() {
  if (unlimited()) return std::numeric_limits<double>::infinity();
  std::lock_guard lock(mu_);
  refill();
  return tokens_;
}

bool TokenBucket::acquire(double n, const std::atomic<bool>& cancel) {
  if (unlimited()) return true;
  n = std::min(n, capacity_);
  for (;;) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mu_);
      refill();
      if (tokens_ >= n) {
        tokens_ -= n;
        return true;
      }
      wait = std::chrono::duration<double>((n - tokens_) / rate_);
    }
    if (cancel) return false;
    std::this_thread::sleep_for(std::min<std::chrono::duration<double>>(wait, 50ms));
  }
}

void TokenBucket::set_level(double tokens) {
  std::lock_guard lock(mu_);
  refill();
  tokens_ = std::clamp(tokens, 0.0, capacity_);
}

// ---- TransferMeter ---------------------------------------------------------

void TransferMeter::record(std::uint64_t bytes) {
  std::lock_guard lock(mu_);
  samples_.emplace_back(std::chrono::steady_clock::now(), bytes);
}

std::uint64_t TransferMeter::max_window_bytes(std::chrono::milliseconds window) const {
  std::lock_guard lock(mu_);
  std::uint64_t best = 0, sum = 0;
  std::size_t lo = 0;
  for (std::size_t hi = 0; hi < samples_.size(); ++hi) {
    sum += samples_[hi].second;
    while (samples_[hi].first - samples_[lo].first >= window) sum -= samples_[lo++].second;
    best = std::max(best, sum);
  }
  return best;
}

std::uint64_t TransferMeter::total() const {
  std::lock_guard lock(mu_);
  std::uint64_t sum = 0;
  for (const auto& s : samples_) sum += s.second;
  return sum;
}

// ---- TaskQueue -------------------------------------------------------------

bool TaskQueue::push(TransferTask task) {
  std::lock_guard lock(mu_);
  for (const auto& t : tasks_)
    if (t.host() == task.host() && t.path() == task.path()) return false;
  if (running_.count({task.host(), task.path(), task.ops.role})) return false;
  task.seq = next_seq_++;
  tasks_.push_back(std::move(task));
  return true;
}

std::optional<TransferTask> TaskQueue::next(double tokens, double capacity, TimePoint now) {
  std::lock_guard lock(mu_);
  auto best = tasks_.end();
  for (auto it = tasks_.begin(); it != tasks_.end(); ++it) {
    if (it->not_before > now) continue;
    if (busy_.count({it->host(), it->path()})) continue;
    double cost = std::min(static_cast<double>(it->size), capacity);
    if (tokens <= 0 || cost > tokens) continue;
    if (best == tasks_.end() || it->priority > best->priority ||
        (it->priority == best->priority &&
         (it->enqueued_at < best->enqueued_at || (it->enqueued_at == best->enqueued_at && it->seq < best->seq))))
      best = it;
  }
  if (best == tasks_.end()) return std::nullopt;
  TransferTask out = std::move(*best);
  tasks_.erase(best);
  busy_.insert({out.host(), out.path()});
  running_.insert({out.host(), out.path(), out.ops.role});
  return out;
}

void TaskQueue::done(const TransferTask& task) {
  std::lock_guard lock(mu_);
  busy_.erase({task.host(), task.path()});
  running_.erase({task.host(), task.path(), task.ops.role});
}

std::size_t TaskQueue::queued() const {
  std::lock_guard lock(mu_);
  return tasks_.size();
}

std::size_t TaskQueue::executing() const {
  std::lock_guard lock(mu_);
  return running_.size();
}

// ---- Harvester -------------------------------------------------------------

namespace {

std::unique_ptr<BackupCodec> make_codec(const HarvesterSettings& s) {
  if (s.encrypt) return SecretStreamCodec::from_hex(s.encryption_key_hex);
  return std::make_unique<IdentityCodec>();
}

double bucket_rate(const HarvesterSettings& s) { return static_cast<double>(s.rate_limit_bytes_per_sec); }

constexpr std::size_t kChunk = 64 * 1024;

void clear_dir(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir);
}

}  // namespace

Harvester::Harvester(const Config& config, Store& store)
    : config_(config),
      store_(store),
      codec_(make_codec(config.harvester)),
      bucket_(bucket_rate(config.harvester), bucket_rate(config.harvester)) {}

Harvester::~Harvester() { stop(); }

void Harvester::start() {
  if (running_) return;
  stopping_ = false;
  const auto& h = config_.harvester;
  fs::create_directories(h.archive_root);
  fs::create_directories(h.backup_root);
  clear_dir(h.archive_root / ".staging");
  clear_dir(h.backup_root / ".staging");

  net::Timeouts timeouts;
  timeouts.frame.max_frame_size = h.max_frame_size;
  timeouts.frame.header_timeout = h.header_timeout;
  timeouts.frame.body_timeout = h.body_timeout;
  running_ = true;
  server_ = net::serve({h.host, h.port, net::EndpointRole::server}, [this](const OpsMessage& m) { return handle(m); },
                       timeouts);
  extractor_listener_ = std::make_unique<net::Listener>(net::Endpoint{h.host, h.extractor_port, net::EndpointRole::server});
  extractor_acceptor_ = std::thread([this] { accept_extractors(); });
  for (int i = 0; i < std::max(1, h.workers); ++i) workers_.emplace_back([this] { worker_loop(); });
  spdlog::info("harvester listening on {}:{} (extractors on {})", h.host, port(), extractor_port());
}

void Harvester::stop() {
  stopping_ = true;
  if (!running_.exchange(false)) return;
  if (server_) server_->stop();
  if (extractor_listener_) extractor_listener_->shutdown();
  if (extractor_acceptor_.joinable()) extractor_acceptor_.join();
  {
    std::lock_guard lock(channels_mu_);
    for (auto& c : idle_channels_) c->socket().shutdown();
    for (auto* c : busy_channels_) c->socket().shutdown();
  }
  channels_cv_.notify_all();
  for (auto& w : workers_)
    if (w.joinable()) w.join();
  workers_.clear();
  std::lock_guard lock(channels_mu_);
  idle_channels_.clear();
}

std::uint16_t Harvester::port() const { return server_ ? server_->port() : config_.harvester.port; }

std::uint16_t Harvester::extractor_port() const {
  return extractor_listener_ ? extractor_listener_->port() : config_.harvester.extractor_port;
}

bool Harvester::idle() const { return queue_.queued() == 0 && queue_.executing() == 0; }

std::size_t Harvester::attached_extractors() const {
  std::lock_guard lock(channels_mu_);
  return idle_channels_.size() + busy_channels_.size();
}

void Harvester::accept_extractors() {
  net::Timeouts timeouts;
  timeouts.frame.max_frame_size = config_.harvester.max_frame_size;
  timeouts.frame.body_timeout = config_.harvester.body_timeout;
  // Extraction of a large file can take a while before the ack comes back.
  timeouts.frame.header_timeout = std::max<std::chrono::milliseconds>(config_.harvester.header_timeout, 300s);
  while (running_) {
    auto sock = extractor_listener_->accept(200ms);
    if (!sock.valid()) continue;
    std::lock_guard lock(channels_mu_);
    idle_channels_.push_back(std::make_unique<net::Connection>(std::move(sock), timeouts));
    channels_cv_.notify_one();
  }
}

net::Reply Harvester::call_extractor(const OpsMessage& msg, bool expect_attachment, std::chrono::milliseconds wait) {
  const auto deadline = std::chrono::steady_clock::now() + wait;
  for (;;) {
    std::unique_ptr<net::Connection> ch;
    {
      std::unique_lock lock(channels_mu_);
      channels_cv_.wait_until(lock, deadline, [&] { return !idle_channels_.empty() || !running_; });
      if (idle_channels_.empty())
        throw HarvestError(HarvestError::Kind::Unavailable, "no extractor attached");
      ch = std::move(idle_channels_.front());
      idle_channels_.pop_front();
      busy_channels_.insert(ch.get());
    }
    try {
      auto reply = ch->request(msg, expect_attachment);
      std::lock_guard lock(channels_mu_);
      busy_channels_.erase(ch.get());
      if (running_) {
        idle_channels_.push_back(std::move(ch));
        channels_cv_.notify_one();
      }
      return reply;
    } catch (const std::exception& e) {
      // A dead channel is dropped; the extractor reconnects on its own.
      spdlog::debug("extractor channel dropped: {}", e.what());
      std::lock_guard lock(channels_mu_);
      busy_channels_.erase(ch.get());
      if (!running_) throw HarvestError(HarvestError::Kind::Unavailable, "harvester stopping");
    }
  }
}

net::Reply Harvester::handle(const OpsMessage& msg) {
  switch (msg.role) {
    case OpsRole::test: return OpsMessage::ack("OK", "harvester ready");
    case OpsRole::transfer:
    case OpsRole::update: return enqueue(msg);
    case OpsRole::readback:
      try {
        return call_extractor(msg, true, 5s);
      } catch (const HarvestError& e) {
        return OpsMessage::error("E_UNAVAILABLE", e.what());
      }
    case OpsRole::ack:
    case OpsRole::error: break;
  }
  return OpsMessage::error("E_SCHEMA", "unexpected role " + std::string(to_string(msg.role)));
}

TransferTask Harvester::make_task(const OpsMessage& msg) {
  TransferTask task;
  task.ops = msg;
  const auto& target = *msg.target;
  const auto* tool = config_.find_tool(target.tool.name);
  task.unknown_tool = tool == nullptr;
  task.priority = tool ? tool->priority : 0;
  task.enqueued_at = Clock::now();
  task.not_before = task.enqueued_at;
  for (const auto& m : config_.mounts) {
    if (m.host_label == target.source_host) {
      task.source_file = m.root_path / target.source_path;
      break;
    }
  }
  if (task.source_file.empty() && fs::path(target.source_path).is_absolute()) task.source_file = target.source_path;
  std::error_code ec;
  auto size = task.source_file.empty() ? 0 : fs::file_size(task.source_file, ec);
  task.size = ec ? 0 : size;
  return task;
}

OpsMessage Harvester::enqueue(const OpsMessage& msg) {
  if (!msg.target) return OpsMessage::error("E_SCHEMA", "missing Target");
  auto task = make_task(msg);
  const bool unknown = task.unknown_tool;
  const bool queued = queue_.push(std::move(task));
  if (unknown)
    return OpsMessage::ack("E_UNKNOWN_TOOL", "no translation config for tool '" + msg.target->tool.name +
                                                 (queued ? "'; queued at priority 0" : "'; coalesced"));
  return OpsMessage::ack("OK", queued ? "queued" : "coalesced");
}

std::optional<std::string> Harvester::hash_of(const std::string& relative) const {
  auto full = config_.harvester.archive_root / relative;
  std::error_code ec;
  if (!fs::is_regular_file(full, ec)) return std::nullopt;
  return sha256_file(full);
}

fs::path Harvester::staging_file() {
  return config_.harvester.archive_root / ".staging" / ("copy-" + std::to_string(::getpid()) + "-" + std::to_string(staging_counter_++));
}

void Harvester::write_backup(const std::string& relative) {
  const auto& h = config_.harvester;
  auto dst = h.backup_root / relative;
  auto tmp = h.backup_root / ".staging" / ("backup-" + std::to_string(::getpid()) + "-" + std::to_string(staging_counter_++));
  fs::create_directories(tmp.parent_path());
  {
    std::ifstream in(h.archive_root / relative, std::ios::binary);
    if (!in) throw HarvestError(HarvestError::Kind::CopyFailed, "cannot read archived " + relative);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    codec_->encode(in, out);
    out.flush();
    if (!out) throw HarvestError(HarvestError::Kind::CopyFailed, "cannot write backup of " + relative);
  }
  fs::create_directories(dst.parent_path());
  fs::rename(tmp, dst);
}

HarvestOutcome Harvester::execute_transfer(const TransferTask& task) {
  using Kind = HarvestError::Kind;
  const auto& h = config_.harvester;
  if (task.source_file.empty())
    throw HarvestError(Kind::CopyFailed, "no mount for host '" + task.host() + "'");

  std::error_code ec;
  auto before = fs::file_size(task.source_file, ec);
  if (ec) throw HarvestError(Kind::CopyFailed, "source unavailable: " + task.source_file.string());
  auto mtime_ft = fs::last_write_time(task.source_file, ec);
  if (ec) throw HarvestError(Kind::CopyFailed, "source unavailable: " + task.source_file.string());

  HarvestOutcome out;
  out.mtime = from_file_time(mtime_ft);
  auto tmp = staging_file();
  fs::create_directories(tmp.parent_path());
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code e;
      fs::remove(p, e);
    }
  } cleanup{tmp};

  Sha256 hasher;
  std::uint64_t copied = 0;
  {
    std::ifstream in(task.source_file, std::ios::binary);
    if (!in) throw HarvestError(Kind::CopyFailed, "cannot open " + task.source_file.string());
    std::ofstream dst(tmp, std::ios::binary | std::ios::trunc);
    if (!dst) throw HarvestError(Kind::CopyFailed, "cannot create staging file");
    const std::size_t chunk =
        bucket_.unlimited() ? kChunk : std::max<std::size_t>(1, std::min<std::size_t>(kChunk, bucket_.capacity()));
    std::string buf(chunk, '\0');
    for (;;) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      auto n = static_cast<std::size_t>(in.gcount());
      if (n == 0) break;
      if (!bucket_.acquire(static_cast<double>(n), stopping_))
        throw HarvestError(Kind::CopyFailed, "harvester stopping");
      dst.write(buf.data(), static_cast<std::streamsize>(n));
      hasher.update(std::string_view(buf.data(), n));
      meter_.record(n);
      copied += n;
    }
    if (in.bad()) throw HarvestError(Kind::CopyFailed, "read error on " + task.source_file.string());
    dst.flush();
    if (!dst) throw HarvestError(Kind::CopyFailed, "write error in staging");
  }
  auto after = fs::file_size(task.source_file, ec);
  if (ec) throw HarvestError(Kind::VerifyFailed, "source vanished during copy: " + task.source_file.string());
  if (after != copied || before != copied)
    throw HarvestError(Kind::VerifyFailed, "size changed during copy: copied " + std::to_string(copied) +
                                               " bytes, source now " + std::to_string(after));
  fs::last_write_time(tmp, mtime_ft, ec);
  out.content_hash = hasher.hex_digest();
  out.size = copied;

  std::lock_guard lock(archive_mu_);
  bool need_backup = false;
  std::optional<std::string> canonical;
  if (task.ops.role == OpsRole::update) {
    canonical = store_.log_archive_path_for_source(task.host(), task.path());
    if (canonical && !fs::exists(h.archive_root / *canonical)) canonical.reset();
  }
  if (canonical) {
    out.archive_path = *canonical;
    auto current = hash_of(*canonical);
    if (current != out.content_hash) {
      // Keep the superseded bytes as the first free .v<k>. A retry after a
      // crash between link and rename finds them already retained.
      int highest = 1;
      while (fs::exists(h.archive_root / (*canonical + ".v" + std::to_string(highest + 1)))) ++highest;
      std::string retained = *canonical + ".v" + std::to_string(highest);
      bool already = highest >= 2 && hash_of(retained) == current;
      if (!already) {
        retained = *canonical + ".v" + std::to_string(highest + 1);
        fs::create_hard_link(h.archive_root / *canonical, h.archive_root / retained);
        auto old_backup = h.backup_root / *canonical;
        if (fs::exists(old_backup)) {
          fs::rename(old_backup, h.backup_root / retained);
        } else {
          write_backup(retained);
        }
      }
      if (already && !fs::exists(h.backup_root / retained)) write_backup(retained);
      fs::rename(tmp, h.archive_root / *canonical);
      out.copied = true;
      out.swapped = true;
      out.retained_as = retained;
      need_backup = true;
    }
  } else {
    auto date = archive_date(out.mtime);
    auto name = fs::path(task.path()).filename().string();
    out.archive_path = archive_path(task.ops.target->tool.name, name, date,
                                    [this](const std::string& rel) { return hash_of(rel); }, out.content_hash);
    auto full = h.archive_root / out.archive_path;
    if (!fs::exists(full)) {
      fs::create_directories(full.parent_path());
      fs::rename(tmp, full);
      out.copied = true;
      need_backup = true;
    }
  }
  if (need_backup || !fs::exists(h.backup_root / out.archive_path)) write_backup(out.archive_path);
  return out;
}

void Harvester::run_task(TransferTask task) {
  auto entry = store_.log_latest_by_source(task.host(), task.path());
  try {
    auto outcome = execute_transfer(task);
    spdlog::info("harvested {}:{} -> {}{}", task.host(), task.path(), outcome.archive_path,
                 outcome.copied ? "" : " (already archived)");
    if (entry) store_.log_update(entry->entry_id, LogStatus::Harvested, {std::nullopt, outcome.archive_path, {}});

    OpsMessage msg;
    msg.role = outcome.swapped ? OpsRole::update : OpsRole::transfer;
    msg.timestamp = Timestamp::now();
    msg.target = *task.ops.target;
    set_extra_attribute(*msg.target, kOriginHostAttr, task.host());
    set_extra_attribute(*msg.target, kOriginPathAttr, task.path());
    msg.target->source_host = "archive";
    msg.target->source_path = outcome.archive_path;
    try {
      auto reply = call_extractor(msg, false, 10s);
      if (reply.message.role == OpsRole::ack) {
        if (entry) store_.log_update(entry->entry_id, LogStatus::Extracted);
      } else {
        auto detail = "extractor: " + reply.message.status->code + " " + reply.message.status->detail;
        spdlog::warn("{} {}", outcome.archive_path, detail);
        if (entry) store_.log_update(entry->entry_id, LogStatus::Failed, {detail, {}, {}});
      }
    } catch (const HarvestError& e) {
      // Stays Harvested; reconciliation re-announces it.
      spdlog::warn("{} archived but not extracted: {}", outcome.archive_path, e.what());
    }
    queue_.done(task);
  } catch (const std::exception& e) {
    queue_.done(task);
    ++task.attempts;
    spdlog::warn("transfer of {}:{} failed (attempt {}): {}", task.host(), task.path(), task.attempts, e.what());
    if (entry) store_.log_update(entry->entry_id, LogStatus::Failed, {std::string(e.what()), {}, {}});
    if (task.attempts < config_.harvester.max_attempts && running_) {
      auto backoff = config_.harvester.backoff_initial * (1LL << std::min(task.attempts - 1, 16));
      task.not_before = Clock::now() + std::chrono::duration_cast<Clock::duration>(backoff);
      queue_.push(std::move(task));
    }
  }
}

void Harvester::worker_loop() {
  while (running_) {
    std::optional<TransferTask> task;
    try {
      task = queue_.next(bucket_.available(), bucket_.unlimited() ? std::numeric_limits<double>::infinity()
                                                                  : bucket_.capacity(),
                         Clock::now());
    } catch (const std::exception& e) {
      spdlog::error("harvest queue: {}", e.what());
    }
    if (!task) {
      std::this_thread::sleep_for(5ms);
      continue;
    }
    try {
      run_task(std::move(*task));
    } catch (const std::exception& e) {
      spdlog::error("harvest worker: {}", e.what());
    }
  }
}

}  // namespace lims
