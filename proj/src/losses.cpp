#include "textcav/losses.hpp"

#include <cmath>

namespace textcav {
namespace {

void check_shapes(const AffineMap& h, const AffineMap& g, const LossBatch& b) {
  const auto n = h.in_dim();
  const auto m = h.out_dim();
  if (g.in_dim() != m || g.out_dim() != n) {
    throw ShapeError("maps disagree: h is " + std::to_string(n) + "->" + std::to_string(m) +
                     ", g is " + std::to_string(g.in_dim()) + "->" + std::to_string(g.out_dim()));
  }
  if (b.target_image.cols() != m || b.vl_image.cols() != n) {
    throw ShapeError("batch dims " + std::to_string(b.target_image.cols()) + "/" +
                     std::to_string(b.vl_image.cols()) + " do not match maps " +
                     std::to_string(m) + "/" + std::to_string(n));
  }
  if (b.target_image.rows() != b.vl_image.rows()) {
    throw ShapeError("paired batches differ in count: " + std::to_string(b.target_image.rows()) +
                     " vs " + std::to_string(b.vl_image.rows()));
  }
  if (b.vl_text && b.vl_text->rows() > 0 && b.vl_text->cols() != n) {
    throw ShapeError("text batch has " + std::to_string(b.vl_text->cols()) +
                     " columns, expected " + std::to_string(n));
  }
}

struct DMap {
  MatrixD w;
  VectorD b;
  explicit DMap(const AffineMap& m)
      : w(m.weights.cast<double>()), b(m.bias.cast<double>()) {}
  MatrixD apply(const MatrixD& rows) const {
    MatrixD y = rows * w.transpose();
    y.rowwise() += b.transpose();
    return y;
  }
};

// Per-sample residual norms reduced to a batch mean. Writes d(loss)/d(residual)
// into `dres` when requested.
double reduce_residual(const MatrixD& res, bool squared, MatrixD* dres) {
  const auto count = res.rows();
  if (count == 0) {
    if (dres) *dres = MatrixD::Zero(0, res.cols());
    return 0.0;
  }
  const double inv = 1.0 / static_cast<double>(count);
  double acc = 0.0;
  if (dres) dres->resize(res.rows(), res.cols());
  for (Eigen::Index i = 0; i < count; ++i) {
    const double sq = res.row(i).squaredNorm();
    if (squared) {
      acc += sq;
      if (dres) dres->row(i) = 2.0 * inv * res.row(i);
    } else {
      const double norm = std::sqrt(sq);
      acc += norm;
      if (dres) {
        if (norm > 0.0) {
          dres->row(i) = (inv / norm) * res.row(i);
        } else {
          dres->row(i).setZero();
        }
      }
    }
  }
  return acc * inv;
}

}  // namespace

bool LossBreakdown::finite() const {
  return std::isfinite(reconstruction) && std::isfinite(cycle_target) &&
         std::isfinite(cycle_vl_image) && std::isfinite(cycle_vl_text);
}

LossBreakdown evaluate_losses(const AffineMap& h, const AffineMap& g, const LossBatch& batch,
                              const LossOptions& options, MapGradients* grads) {
  check_shapes(h, g, batch);
  const DMap dh(h);
  const DMap dg(g);
  const MatrixD phi = batch.target_image.cast<double>();
  const MatrixD psi = batch.vl_image.cast<double>();
  const bool want = grads != nullptr;
  const double lambda = options.cycle_weight;

  if (want) {
    grads->h_weights = MatrixD::Zero(dh.w.rows(), dh.w.cols());
    grads->h_bias = VectorD::Zero(dh.b.size());
    grads->g_weights = MatrixD::Zero(dg.w.rows(), dg.w.cols());
    grads->g_bias = VectorD::Zero(dg.b.size());
  }

  LossBreakdown out;
  MatrixD d;

  // Reconstruction: ||h(psi) - phi||^2 + ||g(phi) - psi||^2.
  const MatrixD h_psi = dh.apply(psi);
  const MatrixD g_phi = dg.apply(phi);
  out.reconstruction = reduce_residual(h_psi - phi, true, want ? &d : nullptr);
  if (want) {
    grads->h_weights.noalias() += d.transpose() * psi;
    grads->h_bias += d.colwise().sum().transpose();
  }
  out.reconstruction += reduce_residual(g_phi - psi, true, want ? &d : nullptr);
  if (want) {
    grads->g_weights.noalias() += d.transpose() * phi;
    grads->g_bias += d.colwise().sum().transpose();
  }

  // h(g(phi)) vs phi.
  out.cycle_target = reduce_residual(dh.apply(g_phi) - phi, options.cycle_squared, want ? &d : nullptr);
  if (want && lambda != 0.0) {
    grads->h_weights.noalias() += lambda * d.transpose() * g_phi;
    grads->h_bias += lambda * d.colwise().sum().transpose();
    const MatrixD dmid = d * dh.w;
    grads->g_weights.noalias() += lambda * dmid.transpose() * phi;
    grads->g_bias += lambda * dmid.colwise().sum().transpose();
  }

  // g(h(x)) vs x for vision-language image and text rows.
  auto vl_cycle = [&](const MatrixD& x, const MatrixD& h_x) {
    const double v = reduce_residual(dg.apply(h_x) - x, options.cycle_squared, want ? &d : nullptr);
    if (want && lambda != 0.0 && x.rows() > 0) {
      grads->g_weights.noalias() += lambda * d.transpose() * h_x;
      grads->g_bias += lambda * d.colwise().sum().transpose();
      const MatrixD dmid = d * dg.w;
      grads->h_weights.noalias() += lambda * dmid.transpose() * x;
      grads->h_bias += lambda * dmid.colwise().sum().transpose();
    }
    return v;
  };
  out.cycle_vl_image = vl_cycle(psi, h_psi);
  if (batch.vl_text && batch.vl_text->rows() > 0) {
    const MatrixD txt = batch.vl_text->cast<double>();
    out.cycle_vl_text = vl_cycle(txt, dh.apply(txt));
  }
  return out;
}

double reconstruction_loss(const AffineMap& h, const AffineMap& g, const Matrix& target_image,
                           const Matrix& vl_image) {
  return evaluate_losses(h, g, {target_image, vl_image, nullptr}, {}).reconstruction;
}

double cycle_loss(const AffineMap& h, const AffineMap& g, const Matrix& target_image,
                  const Matrix& vl_image, const Matrix* vl_text, bool squared) {
  LossOptions opts;
  opts.cycle_squared = squared;
  return evaluate_losses(h, g, {target_image, vl_image, vl_text}, opts).cycle();
}

double total_loss(const AffineMap& h, const AffineMap& g, const LossBatch& batch,
                  const LossOptions& options) {
  return evaluate_losses(h, g, batch, options).total(options.cycle_weight);
}

}  // namespace textcav
