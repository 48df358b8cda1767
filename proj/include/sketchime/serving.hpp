#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sketchime/dataset.hpp"
#include "sketchime/domain_adapt.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"

namespace sketchime {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kServedTopK = 5;

/// Immutable model snapshot. Requests hold a shared_ptr for their whole
/// lifetime, so publication never affects one in flight.
struct PublishedModel {
  ModelState state;
  KnowledgeMatrix km;
  int version = 0;  // 0 is the base model
  std::string origin;
};

/// Feedback store write failure (HTTP 507).
class StoreError : public Error {
 public:
  using Error::Error;
};

/// Append-only per-user NDJSON feedback log. Offsets are line indices.
class FeedbackStore {
 public:
  explicit FeedbackStore(std::string dir);

  /// Returns the offset of the appended record. Throws StoreError.
  std::size_t append(const std::string& user, const nlohmann::json& record);
  /// Records [from, to) of a user; `to` is clamped to the store size.
  std::vector<nlohmann::json> read(const std::string& user, std::size_t from = 0,
                                   std::size_t to = static_cast<std::size_t>(-1)) const;
  std::size_t size(const std::string& user) const;
  const std::string& dir() const { return dir_; }

 private:
  std::string path_for(const std::string& user) const;
  std::mutex& lock_for(const std::string& user) const;

  std::string dir_;
  mutable std::mutex locks_guard_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};


struct ServiceConfig {
  std::string model_path;   // checkpoint; empty or unreadable leaves the service unloaded
  std::string store_dir = "sketchime_store";
  std::string source_path;  // labelled NDJSON exemplar pool for adaptation
  DAConfig da;
  bool async_adapt = true;
  double latency_budget_ms = 500.0;

  /// SKETCHIME_MODEL, SKETCHIME_STORE, SKETCHIME_SOURCE override the fields.
  static ServiceConfig from_env(ServiceConfig base);
  static ServiceConfig from_env();
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Transport-free core of the HTTP API; every method is thread-safe.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Installs a base model directly (tests, embedding).
  void load_base(ModelState state, KnowledgeMatrix km);
  void set_source_pool(std::vector<Sample> pool);

  HttpReply recognize(const std::string& body);
  HttpReply feedback(const std::string& body);
  HttpReply adapt(const std::string& body);
  HttpReply rollback(const std::string& body);
  HttpReply model_info(const std::string& user_id);

  /// Blocks until no adaptation job is running.
  void wait_for_jobs();
  std::shared_ptr<const PublishedModel> current(const std::string& user_id) const;
  const ServiceConfig& config() const { return cfg_; }

 private:
  struct RequestEntry {
    std::string user_id;
    nlohmann::json strokes;
    std::vector<int> topk;
    int model_version = 0;
  };
  struct UserModels {
    std::vector<std::shared_ptr<const PublishedModel>> history;  // back() is live
    int next_version = 1;
    bool adapting = false;
    nlohmann::json last_job;
  };

  void run_job(const std::string& user, std::vector<Sample> target, std::shared_ptr<const PublishedModel> from,
               nlohmann::json job);
  void log_request(const nlohmann::json& entry);

  ServiceConfig cfg_;
  FeedbackStore store_;
  mutable std::mutex mu_;
  std::shared_ptr<const PublishedModel> base_;
  std::map<std::string, UserModels> users_;
  std::map<std::string, RequestEntry> requests_;
  std::vector<Sample> source_pool_;
  std::vector<std::thread> jobs_;
  std::mutex log_mu_;
};

/// Serves the Service over HTTP until `stop` is set or the server fails.
/// Routes: POST /v1/recognize, /v1/feedback, /v1/adapt, /v1/rollback;
/// GET /v1/model?user_id=...
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  /// Binds and serves on the calling thread. Port 0 picks a free port.
  bool listen(const std::string& host, int port);
  /// Binds to a free port, serves in the background, returns the port.
  int start_background(const std::string& host);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sketchime
