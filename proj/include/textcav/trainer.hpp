#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "textcav/adam.hpp"
#include "textcav/affine_map.hpp"
#include "textcav/feature_store.hpp"
#include "textcav/losses.hpp"

namespace textcav {

struct TrainingConfig {
  int epochs = 20;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double cycle_weight = 1.0;
  bool cycle_squared = false;
  std::uint64_t seed = 0;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
  LossOptions loss_options() const { return {cycle_weight, cycle_squared}; }
};

/// Paired image features plus optional text features (zero rows = none).
struct TrainingData {
  Matrix target_image;  // count x m
  Matrix vl_image;      // count x n
  Matrix vl_text;       // text_count x n
};

struct EpochStats {
  int epoch = 0;  // 0 = before the first update
  LossBreakdown train;
  std::optional<LossBreakdown> heldout;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_time_seconds = 0.0;
  Eigen::Index train_count = 0;
  Eigen::Index heldout_count = 0;
  double cycle_weight = 1.0;

  /// Equality ignores wall time.
  bool operator==(const TrainReport& o) const {
    return epochs == o.epochs && train_count == o.train_count &&
           heldout_count == o.heldout_count && cycle_weight == o.cycle_weight;
  }
};

struct TrainResult {
  AffineMap h;  // n -> m
  AffineMap g;  // m -> n
  TrainReport report;
};

/// Thrown when a loss turns non-finite; carries the maps from the last
/// epoch whose losses were finite.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, AffineMap h, AffineMap g, int last_good_epoch)
      : NumericalError(what), h_(std::move(h)), g_(std::move(g)), epoch_(last_good_epoch) {}
  const AffineMap& last_good_h() const { return h_; }
  const AffineMap& last_good_g() const { return g_; }
  int last_good_epoch() const { return epoch_; }

 private:
  AffineMap h_;
  AffineMap g_;
  int epoch_;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// The maps a run starts from for a given seed.
std::pair<AffineMap, AffineMap> initial_maps(Eigen::Index vl_dim, Eigen::Index target_dim,
                                             std::uint64_t seed);

/// Number of trailing rows held out for validation (10%, by index).
Eigen::Index heldout_count_for(Eigen::Index count);

TrainResult train_maps(const TrainingData& data, const TrainingConfig& config,
                       const EpochCallback& on_epoch = {});

/// Validates the feature sets as a workspace, then trains.
TrainResult train_maps(const FeatureSet& target_image, const FeatureSet& vl_image,
                       const FeatureSet* vl_text, const TrainingConfig& config,
                       const EpochCallback& on_epoch = {});

/// Affine least squares Y ~ X W^T + b via ridge-regularized normal equations.
AffineMap ols_fit(const Matrix& x, const Matrix& y, double ridge = 1e-6);

}  // namespace textcav
