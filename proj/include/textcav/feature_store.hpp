#pragma once

// On-disk formats for feature matrices (FMX + JSON sidecar), classifier
// heads and concept lists.
//
// FMX layout, all little-endian:
//   bytes 0..3    "FMX1"
//   bytes 4..7    uint32 version (1)
//   bytes 8..11   uint32 rows
//   bytes 12..15  uint32 cols
//   bytes 16..    rows*cols IEEE-754 float32, row-major

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "textcav/linalg.hpp"

namespace textcav {

inline constexpr std::uint32_t kFmxVersion = 1;
inline constexpr double kUnitNormTolerance = 1e-4;

enum class SpaceTag { target_image, vl_image, vl_text };

std::string_view to_string(SpaceTag tag);
SpaceTag parse_space_tag(std::string_view s);

struct FeatureSet {
  SpaceTag tag = SpaceTag::target_image;
  Matrix features;
  std::string model_id;
  bool normalized = false;
  std::string source_dataset;

  Eigen::Index count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

/// Final linear layer of the target model: logits = weights * a + bias.
struct ClassifierHead {
  Matrix weights;  // K x m
  Vector bias;     // K
  std::vector<std::string> class_names;
  std::string model_id;

  Eigen::Index num_classes() const { return weights.rows(); }
  Eigen::Index feature_dim() const { return weights.cols(); }

  /// Throws NotFoundError listing the valid names.
  Eigen::Index class_index(std::string_view name) const;
};

struct HeadLoadReport {
  bool bias_defaulted = false;
};

struct LoadedHead {
  ClassifierHead head;
  HeadLoadReport report;
};

struct ConceptEntry {
  std::string text;
  std::optional<Vector> embedding;
  std::optional<Vector> cav;
};

struct ConceptList {
  std::vector<ConceptEntry> entries;
  std::string provenance;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Trimmed, lowercased form used for uniqueness checks.
std::string normalize_concept_text(std::string_view text);
std::string trim(std::string_view text);

void write_fmx(const Matrix& m, const std::filesystem::path& path);
Matrix read_fmx(const std::filesystem::path& path);

/// Encoding used by write_fmx, exposed for byte-level tests.
std::string encode_fmx(const Matrix& m);
Matrix decode_fmx(std::string_view bytes);

/// "x/y.fmx" -> "x/y.meta.json"
std::filesystem::path meta_path_for(const std::filesystem::path& data_path);

FeatureSet load_feature_set(const std::filesystem::path& data_path,
                            const std::filesystem::path& meta_path);
inline FeatureSet load_feature_set(const std::filesystem::path& data_path) {
  return load_feature_set(data_path, meta_path_for(data_path));
}
void save_feature_set(const FeatureSet& fs,
                      const std::filesystem::path& data_path);

LoadedHead load_head(const std::filesystem::path& weights_path,
                     const std::filesystem::path& meta_path);
inline LoadedHead load_head(const std::filesystem::path& weights_path) {
  return load_head(weights_path, meta_path_for(weights_path));
}
void save_head(const ClassifierHead& head,
               const std::filesystem::path& weights_path);
void validate_head(const ClassifierHead& head);

/// Parses concept JSONL. When expected_dim is given every embedding must
/// have that length; otherwise all embeddings must agree with each other.
ConceptList parse_concepts(std::string_view jsonl,
                           std::optional<Eigen::Index> expected_dim = {});
ConceptList load_concepts(const std::filesystem::path& path,
                          std::optional<Eigen::Index> expected_dim = {});
std::string serialize_concepts(const ConceptList& list);
void save_concepts(const ConceptList& list, const std::filesystem::path& path);

/// Checks the cross-file dimensional contract of a workspace.
void validate_workspace(const FeatureSet& target_image,
                        const FeatureSet& vl_image, const FeatureSet* vl_text,
                        const ClassifierHead* head);

// Whole-file helpers with advisory locking: writers hold an exclusive lock
// on the target path for the duration of the write, readers a shared one.
void write_file_locked(const std::filesystem::path& path,
                       std::string_view bytes);
std::string read_file_locked(const std::filesystem::path& path);

}  // namespace textcav
