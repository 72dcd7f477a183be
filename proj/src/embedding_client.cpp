#include "textcav/embedding_client.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "textcav/feature_store.hpp"

namespace textcav {
namespace fs = std::filesystem;
using json = nlohmann::json;

void EmbedderConfig::validate() const {
  if (expected_dim <= 0) throw PreconditionError("embedder: expected_dim must be > 0");
  if (model_id.empty()) throw PreconditionError("embedder: model_id is required");
}

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  const auto start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = endpoint.find('/', start);
  if (slash == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, slash), prefix};
}

EmbeddingCache::EmbeddingCache(fs::path path) : path_(std::move(path)) {
  if (path_.empty() || !fs::exists(path_)) return;
  const std::string text = read_file_locked(path_);
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      continue;  // a torn trailing record from an interrupted writer
    }
    const auto values = rec.at("embedding").get<std::vector<double>>();
    Vector v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<float>(values[i]);
    entries_[{rec.at("model_id").get<std::string>(), rec.at("text").get<std::string>()}] = v;
  }
}

std::optional<Vector> EmbeddingCache::lookup(const std::string& model_id,
                                             const std::string& text) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find({model_id, text});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void EmbeddingCache::insert(const std::string& model_id,
                            const std::vector<std::pair<std::string, Vector>>& records) {
  std::lock_guard writer(write_mutex_);
  if (!path_.empty()) {
    std::string buf;
    for (const auto& [text, v] : records) {
      json arr = json::array();
      for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(static_cast<double>(v(i)));
      buf += json{{"model_id", model_id}, {"text", text}, {"embedding", arr}}.dump();
      buf += '\n';
    }
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorKind::data, "cannot open embedding cache " + path_.string());
    ::flock(fd, LOCK_EX);
    std::size_t done = 0;
    while (done < buf.size()) {
      const ssize_t n = ::write(fd, buf.data() + done, buf.size() - done);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) {
        ::close(fd);
        throw Error(ErrorKind::data, "cannot append to embedding cache " + path_.string());
      }
      done += static_cast<std::size_t>(n);
    }
    ::close(fd);
  }
  std::unique_lock lock(mutex_);
  for (const auto& [text, v] : records) entries_[{model_id, text}] = v;
}

EmbeddingClient::EmbeddingClient(EmbedderConfig config)
    : config_(std::move(config)), cache_(config_.cache_path) {
  config_.validate();
}

std::optional<Vector> EmbeddingClient::cached(const std::string& text) const {
  return cache_.lookup(config_.model_id, text);
}

std::vector<Vector> EmbeddingClient::embed_texts(const std::vector<std::string>& texts) {
  if (texts.empty()) throw PreconditionError("embed_texts: no texts given");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (trim(texts[i]).empty()) {
      throw PreconditionError("embed_texts: text " + std::to_string(i) + " is empty");
    }
  }
  std::vector<std::optional<Vector>> found(texts.size());
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    found[i] = cache_.lookup(config_.model_id, texts[i]);
    if (!found[i] && seen.insert(texts[i]).second) missing.push_back(texts[i]);
  }
  if (!missing.empty()) {
    const auto fetched = fetch(missing);
    std::vector<std::pair<std::string, Vector>> records;
    for (std::size_t i = 0; i < missing.size(); ++i) records.emplace_back(missing[i], fetched[i]);
    cache_.insert(config_.model_id, records);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (!found[i]) found[i] = cache_.lookup(config_.model_id, texts[i]);
    }
  }
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (auto& v : found) out.push_back(std::move(*v));
  return out;
}

std::vector<Vector> EmbeddingClient::fetch(const std::vector<std::string>& texts) {
  auto unavailable = [&](const std::string& why) {
    std::string msg = "embedder unavailable (" + why + "); missing texts:";
    for (const auto& t : texts) msg += "\n  " + t;
    return UnavailableError(msg);
  };
  if (config_.endpoint.empty()) throw unavailable("no endpoint configured");

  const auto [base, prefix] = split_endpoint(config_.endpoint);
  httplib::Client cli(base);
  const auto secs = config_.timeout.count() / 1000;
  const auto usecs = (config_.timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  const json req = {{"model_id", config_.model_id}, {"texts", texts}};
  ++network_calls_;
  auto res = cli.Post(prefix + "/embed", req.dump(), "application/json");
  if (!res) throw unavailable(httplib::to_string(res.error()));
  if (res->status == 400) {
    throw ContractError("embedder rejected the request (HTTP 400): " + res->body);
  }
  if (res->status != 200) throw unavailable("HTTP " + std::to_string(res->status));

  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("embedder returned invalid JSON: ") + e.what());
  }
  try {
    if (body.at("model_id").get<std::string>() != config_.model_id) {
      throw ContractError("embedder answered for model \"" + body.at("model_id").get<std::string>() +
                          "\", requested \"" + config_.model_id + "\"");
    }
    const auto dim = body.at("dim").get<Eigen::Index>();
    if (dim != config_.expected_dim) {
      throw ContractError("embedder dim " + std::to_string(dim) + " differs from expected " +
                          std::to_string(config_.expected_dim));
    }
    const auto& rows = body.at("embeddings");
    if (!rows.is_array() || rows.size() != texts.size()) {
      throw ContractError("embedder returned " + std::to_string(rows.size()) +
                          " embeddings for " + std::to_string(texts.size()) + " texts");
    }
    std::vector<Vector> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto values = rows[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != config_.expected_dim) {
        throw ContractError("embedding " + std::to_string(i) + " has length " +
                            std::to_string(values.size()) + ", expected " +
                            std::to_string(config_.expected_dim));
      }
      Vector v(config_.expected_dim);
      for (std::size_t d = 0; d < values.size(); ++d) v(static_cast<Eigen::Index>(d)) = static_cast<float>(values[d]);
      try {
        out.push_back(l2_normalize(v));
      } catch (const DegenerateInputError&) {
        throw ContractError("embedder returned a zero vector for \"" + texts[i] + "\"");
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw ContractError(std::string("embedder response violates the wire contract: ") + e.what());
  }
}

}  // namespace textcav
