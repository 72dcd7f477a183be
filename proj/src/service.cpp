#include "textcav/service.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <httplib.h>

#include "textcav/cav_engine.hpp"
#include "textcav/reports.hpp"

namespace textcav {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kDefaultTop = 10;

ApiResponse json_response(int status, const json& body) { return {status, body.dump(2) + "\n"}; }

ApiResponse error_response(int status, const std::string& msg, json extra = json::object()) {
  extra["error"] = msg;
  return json_response(status, extra);
}

int status_for(const Error& e) {
  if (dynamic_cast<const NotFoundError*>(&e)) return 404;
  if (dynamic_cast<const UnavailableError*>(&e)) return 503;
  if (dynamic_cast<const ContractError*>(&e)) return 502;
  if (e.kind() == ErrorKind::numerical) return 500;
  return 400;
}

template <typename F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return error_response(status_for(e), e.what());
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::size_t parse_top(const std::string& s, std::size_t fallback) {
  if (s.empty()) return fallback;
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ParseError("top must be a positive integer, got \"" + s + "\"");
  }
  if (used != s.size() || v < 1) throw ParseError("top must be a positive integer, got \"" + s + "\"");
  return static_cast<std::size_t>(v);
}

std::string job_number(std::uint64_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(n));
  return buf;
}

json summary(const Workspace& ws) {
  json heads = json::object();
  for (const auto& [id, h] : ws.heads) heads[id] = {{"class_names", h.class_names}, {"model_id", h.model_id}};
  json maps = json::array();
  for (const auto& [id, _] : ws.maps) maps.push_back(id);
  return {
      {"id", ws.id},
      {"target_dim", ws.target_image.dim()},
      {"vl_dim", ws.vl_image.dim()},
      {"image_count", ws.target_image.count()},
      {"text_count", ws.vl_text ? ws.vl_text->count() : 0},
      {"class_names", ws.heads.empty() ? json::array() : json(ws.heads.begin()->second.class_names)},
      {"heads", heads},
      {"maps", maps},
      {"concepts", ws.concepts.size()},
      {"annotations", ws.annotations.has_value()},
  };
}

const ClassifierHead& resolve_head(const Workspace& ws, const std::string& head_id, std::string& resolved) {
  if (head_id.empty()) {
    if (ws.heads.size() == 1) {
      resolved = ws.heads.begin()->first;
      return ws.heads.begin()->second;
    }
    if (ws.heads.empty()) throw NotFoundError("workspace \"" + ws.id + "\" has no classifier head");
    throw ParseError("workspace \"" + ws.id + "\" has several heads; pass head=<id>");
  }
  const auto it = ws.heads.find(head_id);
  if (it == ws.heads.end()) throw NotFoundError("unknown head \"" + head_id + "\"");
  resolved = head_id;
  return it->second;
}

}  // namespace

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

json Job::to_json() const {
  json j = {{"id", id},         {"workspace", workspace},     {"status", std::string(textcav::to_string(status))},
            {"map_id", map_id}, {"epochs_done", epochs_done}, {"config", config}};
  j["report"] = report.is_null() ? json(nullptr) : report;
  j["error"] = error.empty() ? json(nullptr) : json(error);
  return j;
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (const char* v = std::getenv("TEXTCAV_PORT")) c.port = std::atoi(v);
  if (const char* v = std::getenv("TEXTCAV_DATA_DIR")) c.data_dir = v;
  if (const char* v = std::getenv("TEXTCAV_EMBEDDER_URL")) c.embedder_url = v;
  return c;
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (config_.embedding_cache.empty()) config_.embedding_cache = config_.data_dir / "embedding_cache.jsonl";
}

Service::~Service() {
  stop();
  wait_for_jobs();
}

void Service::load_workspaces() {
  if (!fs::exists(config_.data_dir)) return;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(config_.data_dir)) {
    if (entry.is_directory() && WorkspaceLayout{entry.path()}.looks_like_workspace()) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    try {
      publish(std::make_shared<const Workspace>(load_workspace(dir, id)));
    } catch (const Error& e) {
      std::cerr << "skipping workspace " << id << ": " << e.what() << "\n";
      continue;
    }
    const fs::path jobs_dir = WorkspaceLayout{dir}.jobs_dir();
    if (!fs::exists(jobs_dir)) continue;
    for (const auto& entry : fs::directory_iterator(jobs_dir)) {
      if (entry.path().extension() != ".json") continue;
      try {
        const json j = json::parse(read_file_locked(entry.path()));
        Job job;
        job.id = j.at("id").get<std::string>();
        job.workspace = id;
        const std::string st = j.at("status").get<std::string>();
        job.status = st == "done" ? JobStatus::done : JobStatus::failed;
        job.map_id = j.value("map_id", "");
        job.epochs_done = j.value("epochs_done", 0);
        job.config = j.value("config", json(nullptr));
        job.report = j.value("report", json(nullptr));
        job.error = j.value("error", json(nullptr)).is_string() ? j.at("error").get<std::string>() : "";
        if (st != "done" && st != "failed") job.error = "interrupted by server restart";
        const auto dash = job.id.rfind('-');
        if (dash != std::string::npos) {
          next_job_ = std::max<std::uint64_t>(next_job_, std::stoull(job.id.substr(dash + 1)) + 1);
        }
        std::lock_guard lock(jobs_mutex_);
        jobs_[job.id] = job;
      } catch (const std::exception& e) {
        std::cerr << "ignoring job file " << entry.path() << ": " << e.what() << "\n";
      }
    }
  }
}

void Service::publish(std::shared_ptr<const Workspace> ws) {
  std::unique_lock lock(snapshots_mutex_);
  snapshots_[ws->id] = std::move(ws);
}

std::shared_ptr<const Workspace> Service::snapshot(const std::string& id) const {
  std::shared_lock lock(snapshots_mutex_);
  const auto it = snapshots_.find(id);
  if (it == snapshots_.end()) throw NotFoundError("unknown workspace \"" + id + "\"");
  return it->second;
}

std::vector<std::string> Service::workspace_ids() const {
  std::shared_lock lock(snapshots_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : snapshots_) out.push_back(id);
  return out;
}

ApiResponse Service::list_workspaces() const {
  return guarded([&] {
    std::vector<std::shared_ptr<const Workspace>> all;
    {
      std::shared_lock lock(snapshots_mutex_);
      for (const auto& [_, ws] : snapshots_) all.push_back(ws);
    }
    json out = json::array();
    for (const auto& ws : all) out.push_back(summary(*ws));
    return json_response(200, out);
  });
}

ApiResponse Service::get_workspace(const std::string& id) const {
  return guarded([&] { return json_response(200, summary(*snapshot(id))); });
}

void Service::persist_job(const Job& job) const {
  const auto ws = snapshot(job.workspace);
  const fs::path path = WorkspaceLayout{ws->root}.jobs_dir() / (job.id + ".json");
  write_file_locked(path, job.to_json().dump(2) + "\n");
}

void Service::update_job(const Job& job) {
  {
    std::lock_guard lock(jobs_mutex_);
    jobs_[job.id] = job;
  }
  persist_job(job);
}

ApiResponse Service::start_training(const std::string& id, const std::string& body) {
  return guarded([&] {
    const auto ws = snapshot(id);
    const TrainingConfig cfg = training_config_from_json(parse_body(body));
    Job job;
    {
      std::lock_guard lock(jobs_mutex_);
      if (active_job_.count(id)) {
        return error_response(409, "workspace \"" + id + "\" already has a training job",
                              {{"job_id", active_job_.at(id)}});
      }
      std::uint64_t n = next_job_++;
      while (fs::exists(WorkspaceLayout{ws->root}.map("map-" + job_number(n)))) n = next_job_++;
      job.id = "job-" + job_number(n);
      job.workspace = id;
      job.map_id = "map-" + job_number(n);
      job.config = to_json(cfg);
      jobs_[job.id] = job;
      active_job_[id] = job.id;
    }
    persist_job(job);
    {
      std::lock_guard lock(jobs_mutex_);
      workers_.emplace_back(&Service::run_training, this, job.id, ws, cfg);
    }
    return json_response(202, {{"job_id", job.id}, {"map_id", job.map_id}});
  });
}

void Service::run_training(std::string job_id, std::shared_ptr<const Workspace> ws,
                           TrainingConfig config) {
  Job job;
  {
    std::lock_guard lock(jobs_mutex_);
    job = jobs_.at(job_id);
  }
  try {
    job.status = JobStatus::running;
    update_job(job);
    const TrainResult result = train_maps(ws->training_data(), config, [&](const EpochStats& s) {
      std::lock_guard lock(jobs_mutex_);
      jobs_[job_id].epochs_done = s.epoch;
    });
    json report = to_json(result.report);
    report["config"] = to_json(config);

    // Write under a hidden name, then rename into place so the map
    // directory only ever appears complete.
    const WorkspaceLayout layout{ws->root};
    const fs::path staging = layout.maps_dir() / (".staging-" + job.map_id);
    fs::remove_all(staging);
    save_map_checkpoint(staging, result.h, result.g, report);
    fs::rename(staging, layout.map(job.map_id));
    MapCheckpoint cp{job.map_id, result.h, result.g, report};

    {
      std::unique_lock lock(snapshots_mutex_);
      auto next = std::make_shared<Workspace>(*snapshots_.at(ws->id));
      next->maps[job.map_id] = std::move(cp);
      snapshots_[ws->id] = std::move(next);
    }
    {
      std::lock_guard lock(jobs_mutex_);
      job.epochs_done = jobs_[job_id].epochs_done;
    }
    job.report = report;
    job.status = JobStatus::done;
  } catch (const std::exception& e) {
    job.status = JobStatus::failed;
    job.error = e.what();
  }
  try {
    update_job(job);
  } catch (const std::exception& e) {
    std::cerr << "cannot persist job " << job_id << ": " << e.what() << "\n";
  }
  std::lock_guard lock(jobs_mutex_);
  active_job_.erase(job.workspace);
}

ApiResponse Service::get_job(const std::string& id) const {
  return guarded([&] {
    std::lock_guard lock(jobs_mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("unknown job \"" + id + "\"");
    return json_response(200, it->second.to_json());
  });
}

namespace {

struct ScoringContext {
  std::string map_id;
  std::string head_id;
  const MapCheckpoint* map = nullptr;
  const ClassifierHead* head = nullptr;
  Eigen::Index class_index = 0;
};

}  // namespace

ApiResponse Service::get_ranking(const std::string& id, const std::string& class_name,
                                 const std::string& map, const std::string& head,
                                 const std::string& top) const {
  return guarded([&] {
    const auto ws = snapshot(id);
    if (class_name.empty()) throw ParseError("missing query parameter \"class\"");
    const std::size_t n = parse_top(top, kDefaultTop);
    std::string head_id;
    const ClassifierHead& h = resolve_head(*ws, head, head_id);
    const Eigen::Index k = h.class_index(class_name);

    std::string map_id = map;
    if (map_id.empty()) {
      if (ws->maps.empty()) return error_response(409, "workspace \"" + id + "\" has no trained map");
      map_id = ws->maps.rbegin()->first;
    }
    const auto mit = ws->maps.find(map_id);
    if (mit == ws->maps.end()) {
      std::lock_guard lock(jobs_mutex_);
      for (const auto& [_, job] : jobs_) {
        if (job.workspace == id && job.map_id == map_id &&
            (job.status == JobStatus::queued || job.status == JobStatus::running)) {
          return error_response(409, "map \"" + map_id + "\" is still training");
        }
      }
      throw NotFoundError("unknown map \"" + map_id + "\"");
    }
    if (ws->concepts.empty()) return error_response(409, "workspace has no concepts");
    for (const auto& c : ws->concepts.entries) {
      if (!c.embedding) return error_response(409, "concept \"" + c.text + "\" has no embedding");
    }
    SensitivityRanking r = rank_concepts(h, k, ws->concepts, mit->second.h, n);
    r.map_id = map_id;
    r.head_id = head_id;
    return ApiResponse{200, ranking_document(r)};
  });
}

EmbeddingClient* Service::embedder(Eigen::Index dim) {
  std::lock_guard lock(embedder_mutex_);
  auto& slot = embedders_[dim];
  if (!slot) {
    EmbedderConfig cfg;
    cfg.endpoint = config_.embedder_url;
    cfg.timeout = config_.embedder_timeout;
    cfg.expected_dim = dim;
    cfg.model_id = config_.embedder_model_id;
    cfg.cache_path = config_.embedding_cache;
    slot = std::make_unique<EmbeddingClient>(cfg);
  }
  return slot.get();
}

ApiResponse Service::score_concepts(const std::string& id, const std::string& body) {
  return guarded([&] {
    const auto ws = snapshot(id);
    const json req = parse_body(body);
    if (!req.contains("texts") || !req.at("texts").is_array() || req.at("texts").empty()) {
      return error_response(400, "\"texts\" must be a non-empty array");
    }
    const auto texts = req.at("texts").get<std::vector<std::string>>();
    for (const auto& t : texts) {
      if (trim(t).empty()) return error_response(400, "empty concept text");
    }
    const std::string class_name = req.value("class", "");
    if (class_name.empty()) throw ParseError("missing \"class\"");
    std::string head_id;
    const ClassifierHead& head = resolve_head(*ws, req.value("head", ""), head_id);
    const Eigen::Index k = head.class_index(class_name);
    std::string map_id = req.value("map", "");
    if (map_id.empty() && !ws->maps.empty()) map_id = ws->maps.rbegin()->first;
    const auto mit = ws->maps.find(map_id);
    if (mit == ws->maps.end()) {
      if (ws->maps.empty()) return error_response(409, "workspace \"" + id + "\" has no trained map");
      throw NotFoundError("unknown map \"" + map_id + "\"");
    }
    const AffineMap& h = mit->second.h;
    const std::size_t top = req.contains("top") ? req.at("top").get<std::size_t>() : kDefaultTop;
    if (top < 1) throw ParseError("top must be >= 1");

    // Known concepts keep their stored embedding; the rest go to the embedder.
    std::map<std::string, Vector> known;
    for (const auto& c : ws->concepts.entries) {
      if (c.embedding) known.emplace(c.text, *c.embedding);
    }
    std::vector<std::string> to_embed;
    for (const auto& t : texts) {
      if (!known.count(t)) to_embed.push_back(t);
    }
    if (!to_embed.empty()) {
      std::vector<Vector> fetched;
      try {
        fetched = embedder(ws->vl_image.dim())->embed_texts(to_embed);
      } catch (const UnavailableError& e) {
        return error_response(503, e.what(), {{"missing", to_embed}});
      }
      for (std::size_t i = 0; i < to_embed.size(); ++i) known.emplace(to_embed[i], fetched[i]);
    }

    std::vector<RankedConcept> current = textcav::score_concepts(head, k, ws->concepts, h);
    sort_ranking(current);
    const Vector grad = head_gradient(head, k);
    json results = json::array();
    for (const auto& t : texts) {
      const TextCAV cav = make_textcav(ConceptEntry{t, known.at(t), std::nullopt}, h);
      const RankedConcept rc{t, directional_derivative(grad, cav)};
      const std::size_t rank = would_be_rank(current, rc);
      results.push_back({{"text", t},
                         {"score", round_sig9(rc.score)},
                         {"rank", rank},
                         {"in_top", rank <= top},
                         {"known", std::any_of(ws->concepts.entries.begin(), ws->concepts.entries.end(),
                                               [&](const ConceptEntry& c) { return c.text == t; })}});
    }

    json persisted = json::array();
    if (req.value("persist", false)) {
      std::lock_guard plock(persist_mutex_);
      const auto latest = snapshot(id);
      auto next = std::make_shared<Workspace>(*latest);
      std::set<std::string> present;
      for (const auto& c : next->concepts.entries) present.insert(normalize_concept_text(c.text));
      for (const auto& t : texts) {
        if (present.insert(normalize_concept_text(t)).second) {
          next->concepts.entries.push_back({trim(t), known.at(t), std::nullopt});
          persisted.push_back(trim(t));
        }
      }
      if (!persisted.empty()) {
        save_concepts(next->concepts, WorkspaceLayout{next->root}.concepts());
        publish(std::move(next));
      }
    }
    return json_response(200, {{"class", class_name},
                               {"map_id", map_id},
                               {"head_id", head_id},
                               {"top", top},
                               {"concept_count", ws->concepts.size()},
                               {"results", results},
                               {"persisted", persisted}});
  });
}

ApiResponse Service::compare(const std::string& id, const std::string& body) const {
  return guarded([&] {
    const auto ws = snapshot(id);
    const json req = parse_body(body);
    const std::string class_name = req.value("class", "");
    if (class_name.empty()) throw ParseError("missing \"class\"");
    std::string id_a, id_b;
    const ClassifierHead& ha = resolve_head(*ws, req.value("head_a", ""), id_a);
    const ClassifierHead& hb = resolve_head(*ws, req.value("head_b", ""), id_b);
    std::string map_id = req.value("map", "");
    if (map_id.empty() && !ws->maps.empty()) map_id = ws->maps.rbegin()->first;
    const auto mit = ws->maps.find(map_id);
    if (mit == ws->maps.end()) {
      if (ws->maps.empty()) return error_response(409, "workspace \"" + id + "\" has no trained map");
      throw NotFoundError("unknown map \"" + map_id + "\"");
    }
    const std::size_t top = req.contains("top") ? req.at("top").get<std::size_t>() : kDefaultTop;
    if (top < 1) throw ParseError("top must be >= 1");

    std::optional<AnnotationSet> annotations;
    if (req.contains("annotations") && req.at("annotations").is_array()) {
      std::string jsonl;
      for (const auto& rec : req.at("annotations")) jsonl += rec.dump() + "\n";
      annotations = parse_annotations(jsonl);
    } else if (ws->annotations) {
      annotations = ws->annotations;
    }

    SensitivityRanking ra = rank_concepts(ha, ha.class_index(class_name), ws->concepts, mit->second.h, top);
    SensitivityRanking rb = rank_concepts(hb, hb.class_index(class_name), ws->concepts, mit->second.h, top);
    ra.map_id = rb.map_id = map_id;
    ra.head_id = id_a;
    rb.head_id = id_b;
    const CategoryLabels labels = annotations ? annotations->labels_for(class_name) : CategoryLabels{};
    json out = to_json(compare_models(ra, rb, labels));
    out["map_id"] = map_id;
    json crs = {{"a", nullptr}, {"b", nullptr}};
    if (annotations) {
      const std::size_t n = std::min(top, ra.entries.size());
      try {
        crs["a"] = round_sig9(crs_score(*annotations, ra, n));
        crs["b"] = round_sig9(crs_score(*annotations, rb, n));
      } catch (const IncompleteAnnotationError&) {
        crs = {{"a", nullptr}, {"b", nullptr}};
      }
    }
    out["crs"] = crs;
    return json_response(200, out);
  });
}

void Service::wait_for_jobs() {
  for (;;) {
    std::vector<std::thread> pending;
    {
      std::lock_guard lock(jobs_mutex_);
      pending.swap(workers_);
    }
    if (pending.empty()) return;
    for (auto& t : pending) {
      if (t.joinable()) t.join();
    }
  }
}

int Service::bind(const std::string& host) {
  server_ = std::make_unique<httplib::Server>();
  auto& svr = *server_;
  const auto workers = static_cast<std::size_t>(std::max(1, config_.worker_threads));
  svr.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  svr.Get("/v1/workspaces", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, list_workspaces());
  });
  svr.Get(R"(/v1/workspaces/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_workspace(req.matches[1]));
  });
  svr.Post(R"(/v1/workspaces/([^/]+)/train)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, start_training(req.matches[1], req.body));
  });
  svr.Get(R"(/v1/jobs/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_job(req.matches[1]));
  });
  svr.Get(R"(/v1/workspaces/([^/]+)/rankings)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    auto param = [&](const char* key) { return req.has_param(key) ? req.get_param_value(key) : std::string(); };
    reply(res, get_ranking(req.matches[1], param("class"), param("map"), param("head"), param("top")));
  });
  svr.Post(R"(/v1/workspaces/([^/]+)/concepts/score)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, score_concepts(req.matches[1], req.body));
  });
  svr.Post(R"(/v1/workspaces/([^/]+)/compare)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, compare(req.matches[1], req.body));
  });
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "no such endpoint"}}.dump(2) + "\n", "application/json");
    }
  });
  if (config_.port == 0) return svr.bind_to_any_port(host);
  if (!svr.bind_to_port(host, config_.port)) {
    throw Error(ErrorKind::usage, "cannot bind " + host + ":" + std::to_string(config_.port));
  }
  return config_.port;
}

void Service::serve() {
  if (!server_) bind();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace textcav
