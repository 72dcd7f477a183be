#pragma once

// Synthetic worlds with planted ground truth: a known linear map between the
// vision-language space and the target feature space, a concept bank whose
// class-defining concepts are known, and an optional planted dataset bias.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "textcav/cav_engine.hpp"
#include "textcav/concept_pipeline.hpp"
#include "textcav/feature_store.hpp"

namespace textcav {

struct WorldParams {
  std::uint64_t seed = 0;
  Eigen::Index vl_dim = 32;      // n
  Eigen::Index target_dim = 32;  // m
  Eigen::Index classes = 4;
  Eigen::Index samples = 1000;
  double noise_sigma = 0.0;

  Eigen::Index bank_size = 64;
  Eigen::Index attributes = 2;
  Eigen::Index cues_per_group = 3;
  double cue_cosine = 0.75;
  double max_concept_cosine = 0.85;

  double class_prevalence = 0.3;
  double attribute_prevalence = 0.15;
  double class_strength = 0.1;
  double attribute_strength = 1.0;
  double background_strength = 0.5;
  double spread = 0.15;
  double head_noise = 0.01;
  double map_scale_min = 0.8;
  double map_scale_max = 1.25;

  void validate() const;
};

/// Named boolean columns, one row per sample.
struct LabelTable {
  std::vector<std::string> columns;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> values;

  Eigen::Index column(const std::string& name) const;
  Eigen::Index rows() const { return values.rows(); }
};

struct BiasSpec {
  std::string target_class;
  std::string proxy_attribute;
};

/// A class or attribute together with the bank concepts that belong to it.
struct ConceptGroup {
  std::string name;
  bool is_class = true;
  std::size_t anchor = 0;  // bank index of the defining concept
  std::vector<std::size_t> cues;

  bool contains(std::size_t bank_index) const;
};

struct SyntheticWorld {
  WorldParams params;
  Matrix planted_map;  // m x n
  ConceptList bank;
  std::vector<ConceptGroup> groups;  // classes first, then attributes
  std::vector<std::string> class_names;
  std::vector<std::string> attribute_names;
  LabelTable labels;  // classes then attributes
  FeatureSet target_image;
  FeatureSet vl_image;
  FeatureSet vl_text;
  ClassifierHead clean_head;
  std::optional<ClassifierHead> biased_head;
  std::optional<BiasSpec> bias;
  Eigen::Index train_count = 0;  // rows [0, train_count) form the training portion

  const ConceptGroup& group(const std::string& name) const;
  const std::string& planted_concept(const std::string& class_name) const;
};

SyntheticWorld gen_world(const WorldParams& params);
SyntheticWorld gen_world(std::uint64_t seed, Eigen::Index n, Eigen::Index m, Eigen::Index classes,
                         Eigen::Index samples, double noise_sigma);

/// Removes training samples that are positive for the target class but
/// negative for the proxy attribute, then refits the biased head by least
/// squares on +-1 targets.
SyntheticWorld inject_bias(const SyntheticWorld& world, const BiasSpec& spec);

/// Least-squares head from features to +-1 label targets.
ClassifierHead fit_head_ols(const Matrix& features, const LabelTable& labels,
                            const std::vector<std::string>& class_names,
                            const std::string& model_id);

/// Gaussian weights, zero bias.
ClassifierHead random_head(std::uint64_t seed, Eigen::Index classes, Eigen::Index dim,
                           std::vector<std::string> class_names);

struct ClassRecovery {
  std::string class_name;
  std::size_t planted_rank = 0;  // 1-based
  bool hit() const { return planted_rank == 1; }
};

struct BiasRecovery {
  std::string target_class;
  std::string proxy_concept;
  std::size_t proxy_rank_clean = 0;
  std::size_t proxy_rank_biased = 0;
  std::size_t planted_rank_biased = 0;
  std::size_t category_top = 0;
  std::size_t proxy_category_count_clean = 0;
  std::size_t proxy_category_count_biased = 0;
};

struct RecoveryReport {
  std::vector<ClassRecovery> classes;
  double hit_rate = 0.0;
  std::optional<BiasRecovery> bias;
};

RecoveryReport evaluate_recovery(const SyntheticWorld& world, const AffineMap& h,
                                 std::size_t category_top = 10);

/// Top-1 recovery of every planted concept under an arbitrary head.
RecoveryReport evaluate_head_recovery(const SyntheticWorld& world, const ClassifierHead& head,
                                      const AffineMap& h);

/// Relevant = concept belongs to the class's group; one category flag per
/// attribute marking membership of that attribute's group.
AnnotationSet world_annotations(const SyntheticWorld& world);

/// Writes the world as a workspace directory readable by the CLI and service.
void export_world(const SyntheticWorld& world, const std::filesystem::path& dir);

}  // namespace textcav
