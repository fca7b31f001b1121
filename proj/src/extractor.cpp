#include "lims/extractor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace lims {

std::optional<std::string> extra_attribute(const OpsTarget& target, std::string_view name) {
  for (const auto& [k, v] : target.extras.attributes)
    if (k == name) return v;
  return std::nullopt;
}

void set_extra_attribute(OpsTarget& target, const std::string& name, const std::string& value) {
  for (auto& [k, v] : target.extras.attributes) {
    if (k == name) {
      v = value;
      return;
    }
  }
  target.extras.attributes.emplace_back(name, value);
}

Extractor::Extractor(const Config& config, Store& store) : config_(config), store_(store) {}

Extractor::~Extractor() { stop(); }

void Extractor::on_receipt(std::function<void(const ExtractionReceipt&)> hook) { hook_ = std::move(hook); }

std::shared_ptr<std::mutex> Extractor::path_lock(const std::string& archive_path) {
  std::lock_guard lock(locks_mu_);
  auto& slot = locks_[archive_path];
  auto m = slot.lock();
  if (!m) {
    m = std::make_shared<std::mutex>();
    slot = m;
  }
  if (locks_.size() > 4096) std::erase_if(locks_, [](const auto& kv) { return kv.second.expired(); });
  return m;
}

StorageReceipt Extractor::ingest(const std::string& archive_path, const OpsTarget& target, bool update) {
  const auto* cfg = config_.find_tool(target.tool.name);
  if (!cfg) throw ConfigError("no translation config for tool '" + target.tool.name + "'");
  if (!is_archive_relative(archive_path)) throw Error("'" + archive_path + "' is not an archive-relative path");

  auto guard = path_lock(archive_path);
  std::lock_guard lock(*guard);

  auto full = config_.harvester.archive_root / archive_path;
  auto bytes = read_file(full);
  auto mtime = from_file_time(std::filesystem::last_write_time(full));
  auto hash = sha256_hex(bytes);

  auto existing = store_.file_by_archive_path(archive_path);
  if (existing && existing->content_hash == hash) {
    StorageReceipt r;
    r.file_id = existing->id;
    r.version = existing->version;
    r.unchanged = true;
    r.extracted_at = existing->extracted_at.value_or(Clock::now());
    return r;
  }

  TranslationContext tctx;
  tctx.tool = ToolInfo{cfg->tool_name, cfg->kind, target.tool.id};
  tctx.archive_path = archive_path;
  tctx.file_name = std::filesystem::path(archive_path).filename().string();
  tctx.size = bytes.size();
  tctx.mtime = mtime;
  auto t = translate(bytes, *cfg, tctx);

  ExtractContext ectx;
  ectx.sample_code = target.sample_id;
  ectx.operator_username = target.operator_username;
  auto origin_host = extra_attribute(target, kOriginHostAttr);
  auto origin_path = extra_attribute(target, kOriginPathAttr);
  ectx.original_path = origin_path ? (origin_host ? *origin_host + ":" : "") + *origin_path : archive_path;
  ectx.file_timestamp = mtime;
  ectx.size = bytes.size();
  ectx.content_hash = hash;
  ectx.skipped_rows = t.skipped_rows;
  return extract(t.doc, *cfg, ectx, update || existing.has_value());
}

StorageReceipt Extractor::extract(const DataDocument& doc, const TranslationConfig& cfg, const ExtractContext& ctx,
                                  bool update) {
  auto project = ctx.sample_code ? config_.project_for_sample(*ctx.sample_code) : std::nullopt;
  StorageReceipt out;
  ExtractionReceipt er;
  store_.transact([&] {
    auto ids = store_.register_entities(ToolInfo{doc.tool.name, doc.kind, doc.tool.id}, ctx.sample_code, project,
                                        ctx.operator_username);
    const auto now = Clock::now();
    FileInformation info;
    info.archive_path = doc.data_file_link.file;
    info.original_path = ctx.original_path;
    info.file_timestamp = ctx.file_timestamp;
    info.size = ctx.size;
    info.content_hash = ctx.content_hash;
    info.extracted_at = now;

    auto existing = update ? store_.file_by_archive_path(info.archive_path) : std::nullopt;
    InsertResult ins;
    if (existing) {
      info.event_id = existing->event_id;
      info.version = existing->version + 1;
      ins = store_.replace_file(existing->id, doc, info);
    } else {
      EventRecord ev;
      ev.kind = doc.kind == ToolKind::Processing ? EventKind::Processing : EventKind::Measurement;
      ev.tool_id = ids.tool_id;
      ev.operator_id = ids.operator_id;
      ev.sample_id = ids.sample_id;
      ev.occurred_at = ctx.file_timestamp;
      ev.procedure_name = doc.measurement_type.name;
      info.event_id = store_.create_event(ev, doc.measurement_type.id);
      ins = store_.insert_file_with_arrays(doc, info);
    }
    out.file_id = ins.file_id;
    out.version = info.version;
    out.array_ids = std::move(ins.array_ids);
    out.extracted_at = now;
    out.skipped_rows = ctx.skipped_rows;
    if (cfg.storage_target.semantic && cfg.semantic_mapping) {
      // A document without the mapped series stays generic-only.
      bool has_x = false;
      for (const auto& a : doc.aggregates)
        for (const auto& s : a.series) has_x = has_x || s.descriptor.name == cfg.semantic_mapping->x_descriptor;
      if (has_x) out.semantic_ids = store_.promote_semantic(out.file_id, cfg.storage_target.model_name,
                                                            *cfg.semantic_mapping);
    }

    er.file_id = out.file_id;
    er.version = out.version;
    er.tool_name = doc.tool.name;
    er.sample_code = ctx.sample_code;
    er.project_id = ids.project_id;
    if (ids.project_id) {
      for (const auto& p : store_.projects())
        if (p.id == *ids.project_id) er.project = p.name;
    }
    er.archive_path = info.archive_path;
    er.extracted_at = now;
    er.array_count = out.array_ids.size();
    er.semantic_count = out.semantic_ids.size();
    er.skipped_rows = ctx.skipped_rows;
    er.seq = store_.add_receipt(er);
  });
  if (hook_) {
    try {
      hook_(er);
    } catch (const std::exception& e) {
      spdlog::warn("receipt hook failed: {}", e.what());
    }
  }
  return out;
}

DataDocument Extractor::readback(Id file_id) { return store_.load_document(file_id); }

net::Reply Extractor::handle(const OpsMessage& msg) {
  try {
    switch (msg.role) {
      case OpsRole::test: return OpsMessage::ack("OK", "extractor ready");
      case OpsRole::transfer:
      case OpsRole::update: {
        if (!msg.target) return OpsMessage::error("E_SCHEMA", "missing Target");
        auto r = ingest(msg.target->source_path, *msg.target, msg.role == OpsRole::update);
        auto detail = "file_id=" + std::to_string(r.file_id) + " version=" + std::to_string(r.version);
        if (r.skipped_rows) detail += " skipped_rows=" + std::to_string(r.skipped_rows);
        return OpsMessage::ack(r.unchanged ? "UNCHANGED" : "OK", detail);
      }
      case OpsRole::readback: {
        if (!msg.target) return OpsMessage::error("E_SCHEMA", "missing Target");
        std::optional<Id> id;
        if (auto attr = extra_attribute(*msg.target, kFileIdAttr)) {
          try {
            id = std::stoll(*attr);
          } catch (const std::exception&) {
            return OpsMessage::error("E_SCHEMA", "bad fileId '" + *attr + "'");
          }
        } else if (auto f = store_.file_by_archive_path(msg.target->source_path)) {
          id = f->id;
        }
        if (!id || !store_.file(*id)) return OpsMessage::error("E_STORE", "not found");
        auto doc = readback(*id);
        return net::Reply(OpsMessage::ack("OK", "file_id=" + std::to_string(*id)), encode_data_document(doc));
      }
      case OpsRole::ack:
      case OpsRole::error: return OpsMessage::error("E_SCHEMA", "unexpected role " + std::string(to_string(msg.role)));
    }
  } catch (const ConfigError& e) {
    return OpsMessage::error("E_NOCONFIG", e.what());
  } catch (const TranslateError& e) {
    return OpsMessage::error("E_PARSE", e.what());
  } catch (const FormatError& e) {
    return OpsMessage::error("E_PARSE", e.what());
  } catch (const StoreError& e) {
    return OpsMessage::error("E_STORE", e.what());
  } catch (const std::exception& e) {
    return OpsMessage::error("E_STORE", e.what());
  }
  return OpsMessage::error("E_INTERNAL", "unhandled role");
}

void Extractor::attach(const net::Endpoint& harvester, int connections) {
  stopping_ = false;
  for (int i = 0; i < std::max(1, connections); ++i) threads_.emplace_back([this, harvester] { channel_loop(harvester); });
}

void Extractor::stop() {
  stopping_ = true;
  {
    std::lock_guard lock(channels_mu_);
    for (auto* c : live_) c->socket().shutdown();
  }
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  threads_.clear();
}

void Extractor::channel_loop(net::Endpoint harvester) {
  using namespace std::chrono_literals;
  net::Timeouts timeouts;
  timeouts.frame.max_frame_size = config_.harvester.max_frame_size;
  timeouts.frame.body_timeout = config_.harvester.body_timeout;
  while (!stopping_) {
    net::Socket sock;
    try {
      sock = net::connect(harvester, 2s);
    } catch (const net::TransportError&) {
      for (int i = 0; i < 5 && !stopping_; ++i) std::this_thread::sleep_for(50ms);
      continue;
    }
    net::Connection conn(std::move(sock), timeouts);
    {
      std::lock_guard lock(channels_mu_);
      if (stopping_) break;
      live_.push_back(&conn);
    }
    spdlog::debug("extractor channel attached to {}:{}", harvester.host, harvester.port);
    try {
      while (!stopping_) {
        OpsMessage msg;
        try {
          msg = conn.receive(500ms);
        } catch (const net::TransportError& e) {
          if (e.code() == net::Errc::Timeout) continue;
          throw;
        } catch (const FormatError& e) {
          conn.send(OpsMessage::error("E_SCHEMA", e.what()));
          continue;
        }
        auto reply = handle(msg);
        if (reply.message.role == OpsRole::error)
          spdlog::warn("extraction of {} failed: {} {}", msg.target ? msg.target->source_path : "?",
                       reply.message.status->code, reply.message.status->detail);
        conn.send(reply.message);
        if (reply.attachment) conn.send_raw(*reply.attachment);
      }
    } catch (const std::exception& e) {
      if (!stopping_) spdlog::debug("extractor channel dropped: {}", e.what());
    }
    std::lock_guard lock(channels_mu_);
    std::erase(live_, &conn);
  }
}

}  // namespace lims
