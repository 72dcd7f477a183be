#pragma once

#include <random>

#include "textcav/linalg.hpp"

namespace textcav {

/// y = weights * x + bias, with weights stored out_dim x in_dim.
template <typename Scalar>
struct BasicAffineMap {
  MatrixX<Scalar> weights;
  VectorX<Scalar> bias;

  BasicAffineMap() = default;
  BasicAffineMap(MatrixX<Scalar> w, VectorX<Scalar> b)
      : weights(std::move(w)), bias(std::move(b)) {
    if (bias.size() != weights.rows()) {
      throw ShapeError("affine map: bias length " + std::to_string(bias.size()) +
                       " vs " + std::to_string(weights.rows()) + " output rows");
    }
  }

  static BasicAffineMap identity(Eigen::Index dim) {
    return {MatrixX<Scalar>::Identity(dim, dim), VectorX<Scalar>::Zero(dim)};
  }
  static BasicAffineMap zero(Eigen::Index out_dim, Eigen::Index in_dim) {
    return {MatrixX<Scalar>::Zero(out_dim, in_dim), VectorX<Scalar>::Zero(out_dim)};
  }

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }

  template <typename Derived>
  VectorX<Scalar> apply(const Eigen::MatrixBase<Derived>& x) const {
    if (x.size() != in_dim()) {
      throw ShapeError("affine map expects length " + std::to_string(in_dim()) +
                       ", got " + std::to_string(x.size()));
    }
    VectorX<double> y = weights.template cast<double>() * x.template cast<double>();
    y += bias.template cast<double>();
    return y.template cast<Scalar>();
  }

  /// Applies the map to every row of `rows` (count x in_dim).
  template <typename Derived>
  MatrixX<Scalar> apply_rows(const Eigen::MatrixBase<Derived>& rows) const {
    if (rows.cols() != in_dim()) {
      throw ShapeError("affine map expects " + std::to_string(in_dim()) +
                       " columns, got " + std::to_string(rows.cols()));
    }
    MatrixX<double> y = rows.template cast<double>() * weights.template cast<double>().transpose();
    y.rowwise() += bias.template cast<double>().transpose();
    return y.template cast<Scalar>();
  }

  template <typename Other>
  BasicAffineMap<Other> cast() const {
    return {weights.template cast<Other>(), bias.template cast<Other>()};
  }

  bool operator==(const BasicAffineMap& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           weights == o.weights && bias == o.bias;
  }
};

using AffineMap = BasicAffineMap<float>;

/// Weights ~ U(-1/sqrt(in_dim), 1/sqrt(in_dim)), bias zero.
template <typename Scalar = float>
BasicAffineMap<Scalar> init_affine_map(Eigen::Index out_dim, Eigen::Index in_dim,
                                       std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  MatrixX<Scalar> w(out_dim, in_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
  return {std::move(w), VectorX<Scalar>::Zero(out_dim)};
}

}  // namespace textcav
