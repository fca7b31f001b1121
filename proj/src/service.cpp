#include "lims/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>

#include "lims/harvester.hpp"
#include "lims/query.hpp"
#include "lims/timestamp.hpp"

namespace lims {

using nlohmann::json;
using namespace std::chrono_literals;

// ---- tap -------------------------------------------------------------------

bool TapSubscription::wants(const ExtractionReceipt& r) const {
  if (filter_.tool && r.tool_name != *filter_.tool && tool_slug(r.tool_name) != *filter_.tool) return false;
  if (filter_.project && r.project != *filter_.project) return false;
  if (r.project_id && std::find(scope_.begin(), scope_.end(), *r.project_id) == scope_.end()) return false;
  return true;
}

void TapSubscription::offer(const ExtractionReceipt& r) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (queue_.size() >= capacity_) {
      // A slow consumer is cut off rather than slowing the pipeline.
      overflowed_ = closed_ = true;
      queue_.clear();
    } else {
      queue_.push_back(r);
    }
  }
  cv_.notify_all();
}

std::optional<ExtractionReceipt> TapSubscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  auto r = std::move(queue_.front());
  queue_.pop_front();
  return r;
}

bool TapSubscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

bool TapSubscription::overflowed() const {
  std::lock_guard lock(mu_);
  return overflowed_;
}

void TapSubscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::shared_ptr<TapSubscription> TapHub::subscribe(TapFilter filter, std::vector<Id> scope) {
  auto sub = std::make_shared<TapSubscription>(std::move(filter), std::move(scope), buffer_);
  std::lock_guard lock(mu_);
  subs_.push_back(sub);
  return sub;
}

void TapHub::publish(const ExtractionReceipt& receipt) {
  std::vector<std::shared_ptr<TapSubscription>> live;
  {
    std::lock_guard lock(mu_);
    if (!seen_.insert({receipt.file_id, receipt.version}).second) return;
    std::erase_if(subs_, [&](const std::weak_ptr<TapSubscription>& w) {
      auto s = w.lock();
      if (!s || s->closed()) return true;
      live.push_back(std::move(s));
      return false;
    });
  }
  for (auto& s : live)
    if (s->wants(receipt)) s->offer(receipt);
}

std::size_t TapHub::subscribers() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(subs_.begin(), subs_.end(), [](const auto& w) {
    auto s = w.lock();
    return s && !s->closed();
  }));
}

void TapHub::close_all() {
  std::lock_guard lock(mu_);
  for (auto& w : subs_)
    if (auto s = w.lock()) s->close();
  subs_.clear();
}

ReceiptPoller::ReceiptPoller(Store& store, TapHub& hub, std::chrono::milliseconds interval)
    : store_(store), hub_(hub), interval_(interval) {}

ReceiptPoller::~ReceiptPoller() { stop(); }

void ReceiptPoller::start() {
  if (running_.exchange(true)) return;
  last_ = store_.last_receipt_seq();  // only receipts committed from now on
  thread_ = std::thread([this] {
    while (running_) {
      try {
        for (const auto& r : store_.receipts_after(last_)) {
          hub_.publish(r);
          last_ = r.seq;
        }
      } catch (const std::exception& e) {
        spdlog::warn("receipt poll: {}", e.what());
      }
      std::this_thread::sleep_for(interval_);
    }
  });
}

void ReceiptPoller::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

// ---- JSON views --------------------------------------------------------------

namespace {

json opt(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

ApiResponse error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

bool in_scope(const std::vector<Id>& scope, const std::optional<Id>& project) {
  return !project || std::find(scope.begin(), scope.end(), *project) != scope.end();
}

}  // namespace

json to_json(const FileSummary& s) {
  return json{{"file_id", s.file_id},
              {"tool", s.tool_name},
              {"sample", opt(s.sample_code)},
              {"project", opt(s.project)},
              {"date", Timestamp::from(s.file_timestamp).str()},
              {"archive_path", s.archive_path},
              {"original_path", s.original_path},
              {"version", s.version},
              {"size", s.size}};
}

json to_json(const ExtractionReceipt& r) {
  return json{{"seq", r.seq},
              {"file_id", r.file_id},
              {"version", r.version},
              {"tool_name", r.tool_name},
              {"sample_code", opt(r.sample_code)},
              {"project", opt(r.project)},
              {"archive_path", r.archive_path},
              {"extracted_at", Timestamp::from_precise(r.extracted_at).str()},
              {"array_count", r.array_count},
              {"semantic_count", r.semantic_count}};
}

// ---- endpoints ---------------------------------------------------------------

Service::Service(const Config& config, Store& store, TapHub& hub) : config_(config), store_(store), hub_(hub) {}

Service::~Service() { stop(); }

std::optional<std::string> Service::authenticate(std::string_view header) const {
  constexpr std::string_view kBearer = "Bearer ";
  if (header.substr(0, kBearer.size()) != kBearer) return std::nullopt;
  auto it = config_.service.tokens.find(trim(header.substr(kBearer.size())));
  if (it == config_.service.tokens.end()) return std::nullopt;
  return it->second;
}

std::vector<Id> Service::scope(const std::string& user) { return store_.scope_for(user); }

ApiResponse Service::tools(const std::string&) {
  json out = json::array();
  for (const auto& t : store_.tools())
    out.push_back({{"id", t.id},
                   {"name", t.name},
                   {"kind", std::string(to_string(t.kind))},
                   {"external_id", t.external_id ? json(*t.external_id) : json(nullptr)}});
  return {200, out};
}

ApiResponse Service::projects(const std::string& user) {
  auto sc = scope(user);
  json out = json::array();
  for (const auto& p : store_.projects())
    if (in_scope(sc, p.id)) out.push_back({{"id", p.id}, {"name", p.name}});
  return {200, out};
}

ApiResponse Service::samples(const std::string& user) {
  json out = json::array();
  for (const auto& s : store_.samples(scope(user)))
    out.push_back({{"id", s.id}, {"sample_code", s.sample_code}, {"project", opt(s.project)}});
  return {200, out};
}

ApiResponse Service::files(const std::string& user, const std::optional<std::string>& tool,
                           const std::optional<std::string>& from, const std::optional<std::string>& to) {
  std::vector<BooleanQuery> parts;
  if (tool) parts.push_back(BooleanQuery::leaf({Field::ToolName, *tool, {}, {}}));
  if (from || to) {
    Predicate p{Field::DateRange, {}, {}, {}};
    for (auto [text, slot] : {std::pair{&from, &p.from}, std::pair{&to, &p.to}}) {
      if (!*text) continue;
      auto ts = Timestamp::parse(**text);
      if (!ts) return error(400, "bad date '" + **text + "'");
      *slot = ts->instant();
    }
    parts.push_back(BooleanQuery::leaf(p));
  }
  auto ids = store_.evaluate(BooleanQuery::conj(std::move(parts)), scope(user));
  json out = json::array();
  for (const auto& s : store_.file_summaries(ids)) out.push_back(to_json(s));
  return {200, out};
}

std::optional<ApiResponse> Service::guard_file(const std::string& user, Id file_id) {
  auto summary = store_.file_summaries({file_id});
  if (summary.empty()) return error(404, "file " + std::to_string(file_id) + " not found");
  if (!in_scope(scope(user), summary[0].project_id)) return error(403, "not authorized for this file");
  return std::nullopt;
}

ApiResponse Service::series(const std::string& user, Id file_id, bool lexical) {
  if (auto denied = guard_file(user, file_id)) return *denied;
  json series = json::array();
  for (const auto& a : store_.arrays(file_id)) {
    json s{{"aggregate", a.aggregate_index},
           {"name", a.descriptors.size() > 0 ? a.descriptors[0] : ""},
           {"units", a.descriptors.size() > 1 ? a.descriptors[1] : ""}};
    if (lexical) {
      s["values"] = a.lexemes;
    } else {
      json vals = json::array();
      for (const auto& v : a.values) vals.push_back(v ? json(*v) : json(nullptr));
      s["values"] = std::move(vals);
    }
    series.push_back(std::move(s));
  }
  json meta = json::array();
  for (const auto& [agg, m] : store_.metadata(file_id))
    meta.push_back({{"aggregate", agg},
                    {"name", m.name},
                    {"value", opt(m.value)},
                    {"units", m.units},
                    {"comments", opt(m.comments)}});
  return {200, json{{"file_id", file_id}, {"series", series}, {"metadata", meta}}};
}

ApiResponse Service::annotations(const std::string& user, Id file_id) {
  if (auto denied = guard_file(user, file_id)) return *denied;
  json out = json::array();
  for (const auto& a : store_.list_annotations({TargetKind::File, file_id}))
    out.push_back({{"id", a.id},
                   {"author", a.author},
                   {"text", a.text},
                   {"links", a.links},
                   {"created_at", Timestamp::from(a.created_at).str()}});
  return {200, out};
}

ApiResponse Service::search(const std::string& user, const std::string& body) {
  BooleanQuery q;
  try {
    q = parse_query(body.empty() ? json(nullptr) : json::parse(body));
  } catch (const json::exception& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  } catch (const QueryError& e) {
    return error(400, e.what());
  }
  json out = json::array();
  for (const auto& s : store_.file_summaries(store_.evaluate(q, scope(user)))) out.push_back(to_json(s));
  return {200, out};
}

ApiResponse Service::post_annotation(const std::string& user, const std::string& body) {
  AnnotationTarget target;
  std::string text;
  std::vector<std::string> links;
  try {
    auto j = json::parse(body);
    auto kind = parse_target_kind(j.at("target").at("kind").get<std::string>());
    if (!kind) return error(400, "unknown target kind");
    target = {*kind, j.at("target").at("id").get<Id>()};
    text = j.at("text").get<std::string>();
    if (j.contains("links")) links = j.at("links").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    return error(400, std::string("malformed annotation: ") + e.what());
  }
  std::optional<Id> project;
  try {
    project = store_.project_of(target);
  } catch (const StoreError& e) {
    if (e.kind() == StoreError::Kind::UnknownTarget) return error(404, e.what());
    throw;
  }
  if (!in_scope(scope(user), project)) return error(403, "not authorized for this target");
  auto id = store_.annotate(target, user, text, links);
  return {201, json{{"id", id}}};
}

std::optional<ApiResponse> Service::check_tap(const std::string& user, const TapFilter& filter) {
  if (!filter.project) return std::nullopt;
  auto pid = store_.project_id(*filter.project);
  if (pid && !in_scope(scope(user), pid)) return error(403, "not authorized for project " + *filter.project);
  return std::nullopt;
}

// ---- HTTP wiring -------------------------------------------------------------

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

}  // namespace

void Service::start() {
  for (const auto& g : config_.service.grants) store_.grant(g.username, g.project);
  http_ = std::make_unique<httplib::Server>();
  auto& svr = *http_;
  // Every /tap subscriber holds a worker for the life of its stream.
  svr.new_task_queue = [] { return new httplib::ThreadPool(96); };

  using Endpoint = std::function<ApiResponse(const std::string& user, const httplib::Request&)>;
  auto wrap = [this](Endpoint fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      auto user = authenticate(req.get_header_value("Authorization"));
      if (!user) return reply(res, error(401, "missing or unknown bearer token"));
      try {
        reply(res, fn(*user, req));
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        reply(res, error(500, e.what()));
      }
    };
  };
  auto id_of = [](const httplib::Request& req) { return std::stoll(req.matches[1].str()); };

  svr.Get("/tools", wrap([this](const std::string& u, const httplib::Request&) { return tools(u); }));
  svr.Get("/projects", wrap([this](const std::string& u, const httplib::Request&) { return projects(u); }));
  svr.Get("/samples", wrap([this](const std::string& u, const httplib::Request&) { return samples(u); }));
  svr.Get("/files", wrap([this](const std::string& u, const httplib::Request& r) {
            return files(u, param(r, "tool"), param(r, "from"), param(r, "to"));
          }));
  svr.Get(R"(/files/(\d+)/series)", wrap([this, id_of](const std::string& u, const httplib::Request& r) {
            return series(u, id_of(r), param(r, "lexical") == "true");
          }));
  svr.Get(R"(/files/(\d+)/annotations)", wrap([this, id_of](const std::string& u, const httplib::Request& r) {
            return annotations(u, id_of(r));
          }));
  svr.Post("/search", wrap([this](const std::string& u, const httplib::Request& r) { return search(u, r.body); }));
  svr.Post("/annotations",
           wrap([this](const std::string& u, const httplib::Request& r) { return post_annotation(u, r.body); }));

  svr.Get("/tap", [this](const httplib::Request& req, httplib::Response& res) {
    auto user = authenticate(req.get_header_value("Authorization"));
    if (!user) return reply(res, error(401, "missing or unknown bearer token"));
    TapFilter filter{param(req, "tool"), param(req, "project")};
    if (auto denied = check_tap(*user, filter)) return reply(res, *denied);
    auto sub = hub_.subscribe(filter, scope(*user));
    res.set_header("Cache-Control", "no-cache");
    auto greeted = std::make_shared<bool>(false);
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub, greeted](std::size_t, httplib::DataSink& sink) {
          std::string chunk;
          if (!*greeted) {
            *greeted = true;
            chunk = ": subscribed\n\n";
          } else if (auto r = sub->next(500ms)) {
            chunk = "id: " + std::to_string(r->seq) + "\nevent: receipt\ndata: " + to_json(*r).dump() + "\n\n";
          } else if (sub->closed()) {
            if (sub->overflowed()) {
              const std::string bye = "event: overflow\ndata: {}\n\n";
              sink.write(bye.data(), bye.size());
            }
            sink.done();
            return true;
          } else {
            chunk = ": keepalive\n\n";
          }
          return sink.write(chunk.data(), chunk.size());
        },
        [sub](bool) { sub->close(); });
  });

  const auto& s = config_.service;
  if (s.port == 0) {
    int p = svr.bind_to_any_port(s.host);
    if (p < 0) throw Error("cannot bind service on " + s.host);
    port_ = static_cast<std::uint16_t>(p);
  } else {
    if (!svr.bind_to_port(s.host, s.port)) throw Error("cannot bind service on " + s.host + ":" + std::to_string(s.port));
    port_ = s.port;
  }
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  spdlog::info("service listening on {}:{}", s.host, port_);
}

void Service::stop() {
  if (!http_) return;
  hub_.close_all();
  http_->stop();
  if (thread_.joinable()) thread_.join();
  http_.reset();
}

}  // namespace lims
