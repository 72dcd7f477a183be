#pragma once

// HTTP/JSON API over published workspace snapshots.
//
//   GET  /v1/workspaces
//   GET  /v1/workspaces/{id}
//   POST /v1/workspaces/{id}/train          -> 202 {"job_id"}
//   GET  /v1/jobs/{id}
//   GET  /v1/workspaces/{id}/rankings?class=&map=&head=&top=
//   POST /v1/workspaces/{id}/concepts/score
//   POST /v1/workspaces/{id}/compare
//
// Snapshots are immutable; training publishes a new snapshot atomically
// once the map checkpoint is complete on disk.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "textcav/embedding_client.hpp"
#include "textcav/workspace.hpp"

namespace httplib {
class Server;
}

namespace textcav {

struct ServiceConfig {
  int port = 8080;
  std::filesystem::path data_dir = ".";
  std::string embedder_url;
  std::string embedder_model_id = "default";
  std::filesystem::path embedding_cache;  // default: <data_dir>/embedding_cache.jsonl
  std::chrono::milliseconds embedder_timeout{10000};
  int worker_threads = 32;

  /// Defaults overridden by TEXTCAV_PORT, TEXTCAV_DATA_DIR and
  /// TEXTCAV_EMBEDDER_URL.
  static ServiceConfig from_env();
};

enum class JobStatus { queued, running, done, failed };
std::string_view to_string(JobStatus s);

struct Job {
  std::string id;
  std::string workspace;
  JobStatus status = JobStatus::queued;
  std::string map_id;
  int epochs_done = 0;
  nlohmann::json config;
  nlohmann::json report;
  std::string error;

  nlohmann::json to_json() const;
};

/// Body and status of one API response.
struct ApiResponse {
  int status = 200;
  std::string body;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Loads every workspace directory under data_dir plus persisted jobs.
  void load_workspaces();

  std::shared_ptr<const Workspace> snapshot(const std::string& id) const;
  std::vector<std::string> workspace_ids() const;

  // Endpoint handlers, callable without a socket.
  ApiResponse list_workspaces() const;
  ApiResponse get_workspace(const std::string& id) const;
  ApiResponse start_training(const std::string& id, const std::string& body);
  ApiResponse get_job(const std::string& id) const;
  ApiResponse get_ranking(const std::string& id, const std::string& class_name,
                          const std::string& map, const std::string& head,
                          const std::string& top) const;
  ApiResponse score_concepts(const std::string& id, const std::string& body);
  ApiResponse compare(const std::string& id, const std::string& body) const;

  /// Blocks until all training jobs have finished.
  void wait_for_jobs();

  /// Binds the HTTP server; returns the bound port (useful with port 0).
  int bind(const std::string& host = "127.0.0.1");
  /// Serves until stop() is called.
  void serve();
  void stop();

 private:
  void publish(std::shared_ptr<const Workspace> ws);
  void persist_job(const Job& job) const;
  void update_job(const Job& job);
  void run_training(std::string job_id, std::shared_ptr<const Workspace> ws,
                    TrainingConfig config);
  EmbeddingClient* embedder(Eigen::Index dim);

  ServiceConfig config_;
  mutable std::shared_mutex snapshots_mutex_;
  std::map<std::string, std::shared_ptr<const Workspace>> snapshots_;

  mutable std::mutex jobs_mutex_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, std::string> active_job_;  // workspace -> job id
  std::vector<std::thread> workers_;
  std::uint64_t next_job_ = 1;

  std::mutex persist_mutex_;  // serializes concept-list writes

  std::mutex embedder_mutex_;
  std::map<Eigen::Index, std::unique_ptr<EmbeddingClient>> embedders_;

  std::unique_ptr<httplib::Server> server_;
};

}  // namespace textcav
