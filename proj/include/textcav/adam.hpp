#pragma once

#include <cmath>
#include <cstdint>

#include "textcav/linalg.hpp"

namespace textcav {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  VectorX<Scalar> first_moment;
  VectorX<Scalar> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index size)
      : first_moment(VectorX<Scalar>::Zero(size)),
        second_moment(VectorX<Scalar>::Zero(size)) {}
};

/// One bias-corrected Adam update. `params` and `grads` are addressed with
/// linear indices, so any plain dense matrix or vector works.
template <typename DerivedP, typename DerivedG, typename Scalar>
void adam_step(Eigen::DenseBase<DerivedP>& params, const Eigen::DenseBase<DerivedG>& grads,
               AdamState<Scalar>& state, const AdamConfig& cfg) {
  const Eigen::Index n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("adam_step: params " + std::to_string(n) + ", grads " +
                     std::to_string(grads.size()) + ", state " +
                     std::to_string(state.first_moment.size()));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(grads.derived().coeff(i)))) {
      throw NumericalError("adam_step: non-finite gradient at flat index " + std::to_string(i) +
                           " (step " + std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = static_cast<double>(grads.derived().coeff(i));
    const double m = cfg.beta1 * static_cast<double>(state.first_moment(i)) + (1.0 - cfg.beta1) * g;
    const double v =
        cfg.beta2 * static_cast<double>(state.second_moment(i)) + (1.0 - cfg.beta2) * g * g;
    state.first_moment(i) = static_cast<Scalar>(m);
    state.second_moment(i) = static_cast<Scalar>(v);
    const double update = cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    params.derived().coeffRef(i) =
        static_cast<Scalar>(static_cast<double>(params.derived().coeff(i)) - update);
  }
}

}  // namespace textcav
