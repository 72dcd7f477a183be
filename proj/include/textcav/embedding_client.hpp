#pragma once

// Text embeddings for concepts typed at interactive time. Embeddings come
// from an HTTP sidecar (POST {endpoint}/embed) and are cached on disk as
// JSONL, keyed by (model_id, exact text). An empty endpoint means
// cache-only operation.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "textcav/linalg.hpp"

namespace textcav {

struct EmbedderConfig {
  std::string endpoint;
  std::chrono::milliseconds timeout{10000};
  Eigen::Index expected_dim = 0;
  std::string model_id;
  std::filesystem::path cache_path;

  void validate() const;
};

class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  /// Loads every record in `path` (if it exists); later appends go there.
  explicit EmbeddingCache(std::filesystem::path path);

  std::optional<Vector> lookup(const std::string& model_id, const std::string& text) const;
  /// Appends records as one write; in-memory state updates after the write.
  void insert(const std::string& model_id,
              const std::vector<std::pair<std::string, Vector>>& records);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::mutex write_mutex_;
  std::map<std::pair<std::string, std::string>, Vector> entries_;
};

class EmbeddingClient {
 public:
  explicit EmbeddingClient(EmbedderConfig config);

  /// Unit-norm embeddings in input order.
  std::vector<Vector> embed_texts(const std::vector<std::string>& texts);

  std::optional<Vector> cached(const std::string& text) const;
  std::size_t network_calls() const { return network_calls_.load(); }
  const EmbedderConfig& config() const { return config_; }

 private:
  std::vector<Vector> fetch(const std::vector<std::string>& texts);

  EmbedderConfig config_;
  EmbeddingCache cache_;
  std::atomic<std::size_t> network_calls_{0};
};

/// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint);

}  // namespace textcav
