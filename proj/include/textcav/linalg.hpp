#pragma once

// Dense kernel shared by every module. Storage is row-major (one row per
// sample or concept) in the scalar the caller chooses, usually float.
// Reductions always accumulate in double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "textcav/errors.hpp"

namespace textcav {

template <typename Scalar>
using MatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<float>;
using Vector = VectorX<float>;
using MatrixD = MatrixX<double>;
using VectorD = VectorX<double>;

inline constexpr double kMinNorm = 1e-12;

namespace detail {

inline std::string shape_string(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace detail

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().allFinite();
}

/// Standard matrix product, accumulated in double and stored in the left
/// operand's scalar type.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_string(a.rows(), a.cols()) +
                     " x " + detail::shape_string(b.rows(), b.cols()));
  }
  MatrixX<Scalar> out =
      (a.template cast<double>() * b.template cast<double>())
          .template cast<Scalar>();
  if (!out.allFinite()) throw NumericalError("matmul: non-finite result");
  return out;
}

template <typename DerivedU, typename DerivedV>
double dot(const Eigen::MatrixBase<DerivedU>& u,
           const Eigen::MatrixBase<DerivedV>& v) {
  if (u.size() != v.size()) {
    throw ShapeError("dot: lengths " + std::to_string(u.size()) + " and " +
                     std::to_string(v.size()));
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    acc += static_cast<double>(u.derived().coeff(i)) *
           static_cast<double>(v.derived().coeff(i));
  }
  return acc;
}

template <typename Derived>
double l2_norm(const Eigen::MatrixBase<Derived>& v) {
  return std::sqrt(dot(v, v));
}

template <typename DerivedU, typename DerivedV>
double cosine_similarity(const Eigen::MatrixBase<DerivedU>& u,
                         const Eigen::MatrixBase<DerivedV>& v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine_similarity: lengths " + std::to_string(u.size()) +
                     " and " + std::to_string(v.size()));
  }
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu <= kMinNorm || nv <= kMinNorm) {
    throw DegenerateInputError("cosine_similarity: zero vector");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

template <typename Derived>
VectorX<typename Derived::Scalar> l2_normalize(
    const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const double n = l2_norm(v);
  if (!(n > kMinNorm)) {
    throw DegenerateInputError("l2_normalize: norm " + std::to_string(n) +
                               " is too small");
  }
  VectorX<double> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out(i) = static_cast<double>(v.derived().coeff(i)) / n;
  }
  return out.template cast<Scalar>();
}

/// Normalizes every row in place; throws on any near-zero row.
template <typename Derived>
void l2_normalize_rows(Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    m.row(r) = l2_normalize(m.row(r).transpose()).transpose();
  }
}

template <typename DerivedA, typename DerivedB>
double frobenius_distance(const Eigen::MatrixBase<DerivedA>& a,
                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("frobenius_distance: " +
                     detail::shape_string(a.rows(), a.cols()) + " vs " +
                     detail::shape_string(b.rows(), b.cols()));
  }
  double acc = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double d = static_cast<double>(a.derived().coeff(r, c)) -
                       static_cast<double>(b.derived().coeff(r, c));
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

template <typename Derived>
double frobenius_norm(const Eigen::MatrixBase<Derived>& a) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double x = static_cast<double>(a.derived().coeff(r, c));
      acc += x * x;
    }
  }
  return std::sqrt(acc);
}

}  // namespace textcav
