#pragma once

// Shared fixtures and reference implementations for the tests. The
// reference code here is deliberately written with plain loops so it does
// not share arithmetic paths with the library.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "textcav/affine_map.hpp"
#include "textcav/feature_store.hpp"

namespace textcav::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "textcav") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(n(rng));
  }
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += double(m(i, j)) * m(i, j);
    s = std::sqrt(s);
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<float>(m(i, j) / s);
  }
  return m;
}

inline Vector unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = static_cast<float>(v[i] / s);
  return out;
}

inline AffineMap random_map(Eigen::Index out, Eigen::Index in, std::uint64_t seed, double scale = 0.5) {
  AffineMap m;
  m.weights = gaussian(out, in, seed, scale);
  m.bias = gaussian(out, 1, seed + 1, scale).col(0);
  return m;
}

// Loss terms computed directly from their definitions, in double.
inline double ref_sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline std::vector<double> ref_apply(const AffineMap& f, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(f.weights.rows()));
  for (Eigen::Index i = 0; i < f.weights.rows(); ++i) {
    double s = f.bias(i);
    for (Eigen::Index j = 0; j < f.weights.cols(); ++j) s += double(f.weights(i, j)) * x[std::size_t(j)];
    y[std::size_t(i)] = s;
  }
  return y;
}

inline std::vector<double> row(const Matrix& m, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[std::size_t(j)] = m(i, j);
  return r;
}

struct RefLosses {
  double reconstruction = 0.0;
  double cycle = 0.0;
};

inline RefLosses ref_losses(const AffineMap& h, const AffineMap& g, const Matrix& target,
                            const Matrix& vl, const Matrix* text, bool squared) {
  auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
    const double d = ref_sq_dist(a, b);
    return squared ? d : std::sqrt(d);
  };
  RefLosses r;
  const double count = double(target.rows());
  double rec = 0.0, cyc_t = 0.0, cyc_v = 0.0;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    const auto t = row(target, i);
    const auto v = row(vl, i);
    rec += ref_sq_dist(ref_apply(h, v), t) + ref_sq_dist(ref_apply(g, t), v);
    cyc_t += dist(ref_apply(h, ref_apply(g, t)), t);
    cyc_v += dist(ref_apply(g, ref_apply(h, v)), v);
  }
  r.reconstruction = rec / count;
  r.cycle = cyc_t / count + cyc_v / count;
  if (text && text->rows() > 0) {
    double cyc_x = 0.0;
    for (Eigen::Index i = 0; i < text->rows(); ++i) {
      const auto x = row(*text, i);
      cyc_x += dist(ref_apply(g, ref_apply(h, x)), x);
    }
    r.cycle += cyc_x / double(text->rows());
  }
  return r;
}

}  // namespace textcav::testing
