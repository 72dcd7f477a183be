#pragma once

// Reconstruction and cycle losses for the pair of affine maps
//   h : vision-language space (n) -> target feature space (m)
//   g : target feature space (m) -> vision-language space (n)
//
// Every term is a per-sample quantity summed over feature dims and averaged
// over the batch. Reconstruction terms are squared L2 distances; cycle terms
// are plain L2 distances unless `cycle_squared` is set.

#include <optional>

#include "textcav/affine_map.hpp"

namespace textcav {

struct LossOptions {
  double cycle_weight = 1.0;
  bool cycle_squared = false;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double cycle_target = 0.0;    // h(g(I_target)) vs I_target
  double cycle_vl_image = 0.0;  // g(h(I_vl)) vs I_vl
  double cycle_vl_text = 0.0;   // g(h(T_vl)) vs T_vl

  double cycle() const { return cycle_target + cycle_vl_image + cycle_vl_text; }
  double total(double cycle_weight) const { return reconstruction + cycle_weight * cycle(); }
  bool finite() const;
  bool operator==(const LossBreakdown&) const = default;
};

template <typename Scalar>
struct BasicMapGradients {
  MatrixX<Scalar> h_weights;
  VectorX<Scalar> h_bias;
  MatrixX<Scalar> g_weights;
  VectorX<Scalar> g_bias;
};
using MapGradients = BasicMapGradients<double>;

/// A paired image batch plus an (optionally empty) text batch.
struct LossBatch {
  const Matrix& target_image;  // count x m
  const Matrix& vl_image;      // count x n
  const Matrix* vl_text = nullptr;
};

/// All loss terms and, when `grads` is non-null, their analytic gradients
/// with respect to total(options.cycle_weight).
LossBreakdown evaluate_losses(const AffineMap& h, const AffineMap& g, const LossBatch& batch,
                              const LossOptions& options, MapGradients* grads = nullptr);

double reconstruction_loss(const AffineMap& h, const AffineMap& g, const Matrix& target_image,
                           const Matrix& vl_image);

double cycle_loss(const AffineMap& h, const AffineMap& g, const Matrix& target_image,
                  const Matrix& vl_image, const Matrix* vl_text, bool squared = false);

double total_loss(const AffineMap& h, const AffineMap& g, const LossBatch& batch,
                  const LossOptions& options);

}  // namespace textcav
