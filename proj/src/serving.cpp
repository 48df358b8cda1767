#include "sketchime/serving.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sketchime/checkpoint.hpp"
#include "sketchime/sketch.hpp"

namespace sketchime {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, {{"schema_version", kSchemaVersion}, {"error", code}, {"message", message}}};
}

HttpReply ok(int status, json body) {
  body["schema_version"] = kSchemaVersion;
  return {status, std::move(body)};
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Users name files in the store.
bool valid_user(const std::string& u) {
  if (u.empty() || u.size() > 128 || u == "." || u == "..") return false;
  return std::all_of(u.begin(), u.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

std::optional<json> parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::optional<std::string> user_of(const json& j) {
  auto it = j.find("user_id");
  if (it == j.end() || !it->is_string()) return std::nullopt;
  std::string u = it->get<std::string>();
  if (!valid_user(u)) return std::nullopt;
  return u;
}

json knowledge_legend(const KnowledgeMatrix& km) {
  json cats = json::array(), comps = json::array();
  for (int c = 0; c < km.num_categories(); ++c) {
    const std::string name = c < static_cast<int>(km.category_names.size()) ? km.category_names[c] : "";
    cats.push_back({{"id", c}, {"name", name}, {"components", km.components_of(c)}});
  }
  for (int s = 0; s < km.num_components(); ++s) {
    const std::string name = s < static_cast<int>(km.component_names.size()) ? km.component_names[s] : "";
    comps.push_back({{"id", s}, {"name", name}});
  }
  return {{"categories", cats}, {"components", comps}, {"gamma_r", km.gamma_r}};
}

}  // namespace

// ---- feedback store

FeedbackStore::FeedbackStore(std::string dir) : dir_(std::move(dir)) {}

std::string FeedbackStore::path_for(const std::string& user) const {
  return (fs::path(dir_) / "feedback" / (user + ".ndjson")).string();
}

std::mutex& FeedbackStore::lock_for(const std::string& user) const {
  std::lock_guard<std::mutex> g(locks_guard_);
  auto& m = locks_[user];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

std::size_t FeedbackStore::append(const std::string& user, const json& record) {
  std::lock_guard<std::mutex> g(lock_for(user));
  std::error_code ec;
  fs::create_directories(fs::path(path_for(user)).parent_path(), ec);
  if (ec) throw StoreError("cannot create feedback directory: " + ec.message());
  std::size_t n = 0;
  {
    std::ifstream in(path_for(user));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++n;
  }
  std::ofstream out(path_for(user), std::ios::app);
  if (!out) throw StoreError("cannot open feedback log for " + user);
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw StoreError("write to feedback log failed for " + user);
  return n;
}

std::vector<json> FeedbackStore::read(const std::string& user, std::size_t from, std::size_t to) const {
  std::lock_guard<std::mutex> g(lock_for(user));
  std::vector<json> out;
  std::ifstream in(path_for(user));
  std::string line;
  std::size_t i = 0;
  while (i < to && std::getline(in, line)) {
    if (line.empty()) continue;
    if (i >= from) out.push_back(json::parse(line));
    ++i;
  }
  return out;
}

std::size_t FeedbackStore::size(const std::string& user) const { return read(user).size(); }

// ---- config

ServiceConfig ServiceConfig::from_env(ServiceConfig base) {
  if (const char* v = std::getenv("SKETCHIME_MODEL")) base.model_path = v;
  if (const char* v = std::getenv("SKETCHIME_STORE")) base.store_dir = v;
  if (const char* v = std::getenv("SKETCHIME_SOURCE")) base.source_path = v;
  return base;
}

ServiceConfig ServiceConfig::from_env() { return from_env(ServiceConfig{}); }

// ---- service

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.store_dir) {
  cfg_.da.validate();
  if (!cfg_.model_path.empty() && fs::exists(cfg_.model_path)) {
    Checkpoint c = load_checkpoint(cfg_.model_path);
    if (!cfg_.source_path.empty()) {
      const auto sketches = read_ndjson_file(cfg_.source_path);
      source_pool_ = prepare_dataset(sketches, c.state.config);
      validate_labels(source_pool_, c.km, false);
    }
    load_base(std::move(c.state), std::move(c.km));
  }
}

Service::~Service() { wait_for_jobs(); }

void Service::load_base(ModelState state, KnowledgeMatrix km) {
  auto m = std::make_shared<PublishedModel>();
  m->state = std::move(state);
  m->km = std::move(km);
  m->version = 0;
  m->origin = "base";
  std::lock_guard<std::mutex> g(mu_);
  base_ = std::move(m);
}

void Service::set_source_pool(std::vector<Sample> pool) {
  std::lock_guard<std::mutex> g(mu_);
  source_pool_ = std::move(pool);
}

std::shared_ptr<const PublishedModel> Service::current(const std::string& user_id) const {
  std::lock_guard<std::mutex> g(mu_);
  auto it = users_.find(user_id);
  if (it != users_.end() && !it->second.history.empty()) return it->second.history.back();
  return base_;
}

void Service::log_request(const json& entry) {
  std::lock_guard<std::mutex> g(log_mu_);
  std::error_code ec;
  fs::create_directories(cfg_.store_dir, ec);
  std::ofstream out(fs::path(cfg_.store_dir) / "requests.ndjson", std::ios::app);
  if (out) out << entry.dump() << '\n';
}

HttpReply Service::recognize(const std::string& body) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto j = parse_body(body);
  if (!j) return error_reply(422, "unparseable", "request body is not a JSON object");
  const auto user = user_of(*j);
  if (!user) return error_reply(422, "bad_user", "user_id must be a non-empty [A-Za-z0-9_.-] string");
  auto it = j->find("strokes");
  if (it == j->end() || !it->is_array()) return error_reply(422, "unparseable", "strokes must be an array");

  Sketch sketch;
  try {
    sketch = from_ndjson_line(json{{"strokes", *it}}.dump());
  } catch (const Error& e) {
    return error_reply(422, "unparseable", e.what());
  }
  if (sketch.strokes.empty()) return error_reply(400, "empty_sketch", "no strokes");
  if (sketch.point_count() < 2) return error_reply(400, "too_few_points", "a sketch needs at least two points");

  const auto model = current(*user);
  if (!model) return error_reply(503, "no_model", "no model is loaded");

  Sample s;
  ForwardOutput out;
  try {
    s = prepare_sample(sketch, model->state.config);
    out = forward(s.rs, s.img, model->state, model->km, true);
  } catch (const NumericError& e) {
    return error_reply(422, "non_finite", e.what());
  } catch (const Error& e) {
    return error_reply(400, "degenerate_sketch", e.what());
  }

  const int k = std::min(kServedTopK, model->km.num_categories());
  const std::vector<int> top = top_k(out.p_r, k);
  json candidates = json::array();
  for (int c : top) {
    const std::string name =
        c < static_cast<int>(model->km.category_names.size()) ? model->km.category_names[c] : "";
    candidates.push_back({{"category_id", c}, {"name", name}, {"probability", out.p_r(0, c)}});
  }
  json points = json::array();
  for (std::size_t i = 0; i < s.rs.size(); ++i) {
    Eigen::Index arg = 0;
    const double p = out.p_s_final.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    points.push_back({{"x", s.rs.points[i].x},
                      {"y", s.rs.points[i].y},
                      {"stroke", s.rs.stroke_of_point[i]},
                      {"semantic_id", static_cast<int>(arg)},
                      {"probability", p}});
  }
  std::vector<double> gamma(out.gamma.data(), out.gamma.data() + out.gamma.size());

  const std::string rid = hex64(fnv1a(*user + '\n' + it->dump() + '\n' + std::to_string(model->version)));
  {
    std::lock_guard<std::mutex> g(mu_);
    requests_[rid] = RequestEntry{*user, *it, top, model->version};
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  log_request({{"ts", now_iso()},
               {"route", "recognize"},
               {"request_id", rid},
               {"user_id", *user},
               {"model_version", model->version},
               {"latency_ms", ms},
               {"over_budget", ms > cfg_.latency_budget_ms},
               {"top1", top.empty() ? -1 : top[0]}});
  return ok(200, {{"request_id", rid},
                  {"model_version", model->version},
                  {"topk", candidates},
                  {"points", points},
                  {"gamma", gamma},
                  {"rsm_applied", out.rsm_applied}});
}

HttpReply Service::feedback(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return error_reply(422, "unparseable", "request body is not a JSON object");
  auto rid_it = j->find("request_id");
  if (rid_it == j->end() || !rid_it->is_string()) return error_reply(422, "unparseable", "request_id is required");
  const std::string rid = rid_it->get<std::string>();

  RequestEntry req;
  std::shared_ptr<const PublishedModel> base;
  {
    std::lock_guard<std::mutex> g(mu_);
    auto r = requests_.find(rid);
    if (r == requests_.end()) return error_reply(404, "unknown_request", "no recognition with id " + rid);
    req = r->second;
    base = base_;
  }
  if (auto u = j->find("user_id"); u != j->end() && (!u->is_string() || u->get<std::string>() != req.user_id))
    return error_reply(422, "user_mismatch", "user_id does not match the recognition request");

  const bool other = j->value("other", false);
  std::optional<int> category;
  if (auto c = j->find("category_id"); c != j->end() && !c->is_null()) {
    if (!c->is_number_integer()) return error_reply(422, "unparseable", "category_id must be an integer");
    category = c->get<int>();
  }
  if (!category && !other) return error_reply(422, "missing_category", "category_id or other=true is required");
  if (category) {
    const bool in_top = std::find(req.topk.begin(), req.topk.end(), *category) != req.topk.end();
    if (!in_top && !other) return error_reply(422, "not_offered", "category is outside the offered candidates");
    if (!base || *category < 0 || *category >= base->km.num_categories())
      return error_reply(422, "unknown_category", "category id out of range");
  }

  json semantics = nullptr;
  if (auto s = j->find("semantics"); s != j->end() && !s->is_null()) {
    if (!s->is_array() || s->size() != req.strokes.size())
      return error_reply(422, "bad_semantics", "semantics needs one component per stroke");
    for (const auto& v : *s) {
      if (!v.is_number_integer()) return error_reply(422, "bad_semantics", "component ids must be integers");
      const int comp = v.get<int>();
      if (!base || comp < 0 || comp >= base->km.num_components())
        return error_reply(422, "bad_semantics", "component id out of range");
      if (category && !base->km.contains(*category, comp))
        return error_reply(422, "bad_semantics", "component does not belong to the category");
    }
    semantics = *s;
  }

  json record{{"schema_version", kSchemaVersion},
              {"request_id", rid},
              {"user_id", req.user_id},
              {"category_id", category ? json(*category) : json(nullptr)},
              {"other", other},
              {"semantics", semantics},
              {"strokes", req.strokes},
              {"model_version", req.model_version},
              {"timestamp", j->contains("timestamp") && (*j)["timestamp"].is_string() ? (*j)["timestamp"]
                                                                                        : json(now_iso())}};
  std::size_t offset = 0;
  try {
    offset = store_.append(req.user_id, record);
  } catch (const StoreError& e) {
    return error_reply(507, "store_failure", e.what());
  }
  log_request({{"ts", now_iso()}, {"route", "feedback"}, {"request_id", rid}, {"user_id", req.user_id},
               {"offset", offset}});
  return ok(201, {{"offset", offset}, {"user_id", req.user_id}});
}

HttpReply Service::adapt(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return error_reply(422, "unparseable", "request body is not a JSON object");
  const auto user = user_of(*j);
  if (!user) return error_reply(422, "bad_user", "user_id must be a non-empty [A-Za-z0-9_.-] string");
  const int shots = j->value("shots", cfg_.da.shots_target);
  if (shots < 1) return error_reply(422, "bad_shots", "shots must be positive");

  std::shared_ptr<const PublishedModel> from = current(*user);
  if (!from) return error_reply(503, "no_model", "no model is loaded");

  // Every record with a category counts as a shot, "other" picks included.
  const std::size_t end = store_.size(*user);
  const std::vector<json> records = store_.read(*user, 0, end);
  std::map<int, std::vector<Sketch>> by_class;
  for (const auto& r : records) {
    if (!r.contains("category_id") || r["category_id"].is_null()) continue;
    json line{{"strokes", r["strokes"]}, {"category", r["category_id"]}, {"source_id", r.value("request_id", "")}};
    if (r.contains("semantics") && !r["semantics"].is_null()) line["semantics"] = r["semantics"];
    try {
      by_class[r["category_id"].get<int>()].push_back(from_ndjson_line(line.dump()));
    } catch (const Error&) {
      continue;
    }
  }

  std::vector<int> classes;
  if (auto c = j->find("categories"); c != j->end() && c->is_array()) {
    for (const auto& v : *c) {
      if (!v.is_number_integer()) return error_reply(422, "unparseable", "categories must be integers");
      const int cat = v.get<int>();
      if (static_cast<int>(by_class[cat].size()) < shots)
        return error_reply(409, "insufficient_feedback",
                           "category " + std::to_string(cat) + " has fewer than " + std::to_string(shots) + " shots");
      classes.push_back(cat);
    }
  } else {
    for (const auto& [cat, v] : by_class)
      if (static_cast<int>(v.size()) >= shots) classes.push_back(cat);
  }
  if (classes.empty())
    return error_reply(409, "insufficient_feedback", "no category has " + std::to_string(shots) + " feedback shots");

  std::vector<Sample> target;
  try {
    for (int cat : classes)
      for (const auto& sk : by_class[cat]) target.push_back(prepare_sample(sk, from->state.config));
  } catch (const Error& e) {
    return error_reply(422, "bad_feedback", e.what());
  }

  json job{{"user_id", *user},
           {"from_version", from->version},
           {"offsets", {0, end}},
           {"categories", classes},
           {"shots", shots},
           {"status", "running"},
           {"started", now_iso()}};
  {
    std::lock_guard<std::mutex> g(mu_);
    if (source_pool_.empty()) return error_reply(409, "no_source_pool", "no source exemplars are configured");
    UserModels& um = users_[*user];
    if (um.adapting) return error_reply(409, "adaptation_running", "an adaptation job is already running");
    um.adapting = true;
    um.last_job = job;
  }
  log_request({{"ts", now_iso()}, {"route", "adapt"}, {"job", job}});
  if (cfg_.async_adapt) {
    std::lock_guard<std::mutex> g(mu_);
    jobs_.emplace_back(&Service::run_job, this, *user, std::move(target), from, job);
  } else {
    run_job(*user, std::move(target), from, job);
    std::lock_guard<std::mutex> g(mu_);
    job = users_[*user].last_job;
  }
  return ok(202, {{"job", job}});
}

void Service::run_job(const std::string& user, std::vector<Sample> target, std::shared_ptr<const PublishedModel> from,
                      json job) {
  std::vector<Sample> source;
  {
    std::lock_guard<std::mutex> g(mu_);
    source = source_pool_;
  }
  DAConfig da = cfg_.da;
  da.shots_target = job.at("shots").get<int>();
  try {
    DAResult r = sketchime::adapt(from->state, source, target, from->km, da);
    auto m = std::make_shared<PublishedModel>();
    m->state = std::move(r.state);
    m->km = from->km;
    m->origin = "adapt";
    std::lock_guard<std::mutex> g(mu_);
    UserModels& um = users_[user];
    m->version = um.next_version++;
    const fs::path dir = fs::path(cfg_.store_dir) / "models" / user;
    std::error_code ec;
    fs::create_directories(dir, ec);
    try {
      save_checkpoint((dir / ("v" + std::to_string(m->version) + ".ckpt")).string(), m->state, m->km);
      job["checkpoint"] = (dir / ("v" + std::to_string(m->version) + ".ckpt")).string();
    } catch (const std::exception& e) {
      job["checkpoint_error"] = e.what();
    }
    job["status"] = "done";
    job["version"] = m->version;
    job["disc_accuracy_start"] = r.disc_accuracy_start;
    job["disc_accuracy_end"] = r.disc_accuracy_end;
    um.history.push_back(std::move(m));
    um.adapting = false;
    um.last_job = job;
  } catch (const std::exception& e) {
    std::lock_guard<std::mutex> g(mu_);
    job["status"] = "failed";
    job["message"] = e.what();
    users_[user].adapting = false;
    users_[user].last_job = job;
  }
  job["finished"] = now_iso();
  log_request({{"ts", now_iso()}, {"route", "adapt_job"}, {"job", job}});
}

HttpReply Service::rollback(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return error_reply(422, "unparseable", "request body is not a JSON object");
  const auto user = user_of(*j);
  if (!user) return error_reply(422, "bad_user", "user_id must be a non-empty [A-Za-z0-9_.-] string");
  int version = 0;
  {
    std::lock_guard<std::mutex> g(mu_);
    auto it = users_.find(*user);
    if (it == users_.end() || it->second.history.empty())
      return error_reply(409, "nothing_to_roll_back", "the user is on the base model");
    if (it->second.adapting) return error_reply(409, "adaptation_running", "an adaptation job is running");
    it->second.history.pop_back();
    version = it->second.history.empty() ? 0 : it->second.history.back()->version;
  }
  log_request({{"ts", now_iso()}, {"route", "rollback"}, {"user_id", *user}, {"model_version", version}});
  return ok(200, {{"user_id", *user}, {"model_version", version}});
}

HttpReply Service::model_info(const std::string& user_id) {
  if (!valid_user(user_id)) return error_reply(422, "bad_user", "user_id must be a non-empty [A-Za-z0-9_.-] string");
  const auto model = current(user_id);
  if (!model) return error_reply(503, "no_model", "no model is loaded");
  json versions = json::array({0}), last_job = nullptr;
  bool adapting = false;
  {
    std::lock_guard<std::mutex> g(mu_);
    if (auto it = users_.find(user_id); it != users_.end()) {
      for (const auto& m : it->second.history) versions.push_back(m->version);
      adapting = it->second.adapting;
      last_job = it->second.last_job;
    }
  }
  return ok(200, {{"user_id", user_id},
                  {"model_version", model->version},
                  {"origin", model->origin},
                  {"versions", versions},
                  {"adapting", adapting},
                  {"last_job", last_job},
                  {"feedback_records", store_.size(user_id)},
                  {"topk", kServedTopK},
                  {"latency_budget_ms", cfg_.latency_budget_ms},
                  {"knowledge", knowledge_legend(model->km)}});
}

void Service::wait_for_jobs() {
  for (;;) {
    std::vector<std::thread> pending;
    {
      std::lock_guard<std::mutex> g(mu_);
      pending.swap(jobs_);
    }
    if (pending.empty()) return;
    for (auto& t : pending) t.join();
  }
}

// ---- http

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : service(s) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto post = [&](const char* path, HttpReply (Service::*fn)(const std::string&)) {
      server.Post(path, [this, fn, send](const httplib::Request& req, httplib::Response& res) {
        send(res, (service.*fn)(req.body));
      });
    };
    post("/v1/recognize", &Service::recognize);
    post("/v1/feedback", &Service::feedback);
    post("/v1/adapt", &Service::adapt);
    post("/v1/rollback", &Service::rollback);
    server.Get("/v1/model", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.model_info(req.get_param_value("user_id")));
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      send(res, error_reply(500, "internal", msg));
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpServer::start_background(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  if (port < 0) return -1;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace sketchime
