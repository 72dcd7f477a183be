#include "textcav/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace textcav {
namespace {

// Distinct streams derived from the run seed.
constexpr std::uint64_t kInitStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kShuffleStream = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kTextStream = 0x94d049bb133111ebULL;

Matrix gather_rows(const Matrix& src, const std::vector<Eigen::Index>& idx, std::size_t begin,
                   std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), src.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = src.row(idx[i]);
  }
  return out;
}

}  // namespace

void TrainingConfig::validate() const {
  if (epochs < 0) throw PreconditionError("epochs must be >= 0");
  if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw PreconditionError("learning_rate must be > 0");
  if (!(cycle_weight >= 0.0)) throw PreconditionError("cycle weight must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw PreconditionError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw PreconditionError("Adam epsilon must be > 0");
}

std::pair<AffineMap, AffineMap> initial_maps(Eigen::Index vl_dim, Eigen::Index target_dim,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ kInitStream);
  AffineMap h = init_affine_map<float>(target_dim, vl_dim, rng);
  AffineMap g = init_affine_map<float>(vl_dim, target_dim, rng);
  return {std::move(h), std::move(g)};
}

Eigen::Index heldout_count_for(Eigen::Index count) { return count / 10; }

TrainResult train_maps(const TrainingData& data, const TrainingConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Eigen::Index count = data.target_image.rows();
  if (count == 0 || data.vl_image.rows() == 0) {
    throw PreconditionError("train_maps: empty workspace");
  }
  if (data.vl_image.rows() != count) {
    throw ShapeError("train_maps: paired image sets differ in count");
  }
  const Eigen::Index m = data.target_image.cols();
  const Eigen::Index n = data.vl_image.cols();
  const bool has_text = data.vl_text.rows() > 0;
  if (has_text && data.vl_text.cols() != n) {
    throw ShapeError("train_maps: text features have " + std::to_string(data.vl_text.cols()) +
                     " columns, expected " + std::to_string(n));
  }

  const Eigen::Index heldout = heldout_count_for(count);
  const Eigen::Index train_n = count - heldout;
  const Matrix train_phi = data.target_image.topRows(train_n);
  const Matrix train_psi = data.vl_image.topRows(train_n);
  const Matrix held_phi = data.target_image.bottomRows(heldout);
  const Matrix held_psi = data.vl_image.bottomRows(heldout);
  const Matrix* text = has_text ? &data.vl_text : nullptr;

  auto [h, g] = initial_maps(n, m, config.seed);
  const LossOptions opts = config.loss_options();
  const AdamConfig adam = config.adam();

  TrainResult result;
  result.report.train_count = train_n;
  result.report.heldout_count = heldout;
  result.report.cycle_weight = config.cycle_weight;

  auto measure = [&](int epoch) {
    EpochStats s;
    s.epoch = epoch;
    s.train = evaluate_losses(h, g, {train_phi, train_psi, text}, opts);
    if (heldout > 0) s.heldout = evaluate_losses(h, g, {held_phi, held_psi, text}, opts);
    return s;
  };

  AffineMap good_h = h;
  AffineMap good_g = g;
  {
    EpochStats s0 = measure(0);
    if (!s0.train.finite()) {
      throw TrainingAborted("train_maps: non-finite loss at initialization", h, g, 0);
    }
    result.report.epochs.push_back(s0);
    if (on_epoch) on_epoch(s0);
  }

  AdamState<float> s_hw(h.weights.size()), s_hb(h.bias.size());
  AdamState<float> s_gw(g.weights.size()), s_gb(g.bias.size());

  std::mt19937_64 shuffle_rng(config.seed ^ kShuffleStream);
  std::mt19937_64 text_rng(config.seed ^ kTextStream);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Eigen::Index> text_order(static_cast<std::size_t>(data.vl_text.rows()));
  std::iota(text_order.begin(), text_order.end(), Eigen::Index{0});
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t text_bs = std::min(bs, text_order.size());

  MapGradients grads;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      const Matrix bphi = gather_rows(data.target_image, order, b, e);
      const Matrix bpsi = gather_rows(data.vl_image, order, b, e);
      Matrix btxt;
      if (has_text) {
        // Partial Fisher-Yates: the first text_bs entries become the sample.
        for (std::size_t i = 0; i < text_bs; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, text_order.size() - 1);
          std::swap(text_order[i], text_order[pick(text_rng)]);
        }
        btxt = gather_rows(data.vl_text, text_order, 0, text_bs);
      }
      const LossBreakdown lb =
          evaluate_losses(h, g, {bphi, bpsi, has_text ? &btxt : nullptr}, opts, &grads);
      if (!lb.finite()) {
        throw TrainingAborted("train_maps: non-finite loss in epoch " + std::to_string(epoch),
                              good_h, good_g, epoch - 1);
      }
      adam_step(h.weights, grads.h_weights, s_hw, adam);
      adam_step(h.bias, grads.h_bias, s_hb, adam);
      adam_step(g.weights, grads.g_weights, s_gw, adam);
      adam_step(g.bias, grads.g_bias, s_gb, adam);
    }
    EpochStats s = measure(epoch);
    if (!s.train.finite() || (s.heldout && !s.heldout->finite())) {
      throw TrainingAborted("train_maps: non-finite loss after epoch " + std::to_string(epoch),
                            good_h, good_g, epoch - 1);
    }
    good_h = h;
    good_g = g;
    result.report.epochs.push_back(s);
    if (on_epoch) on_epoch(s);
  }

  result.h = std::move(h);
  result.g = std::move(g);
  result.report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

TrainResult train_maps(const FeatureSet& target_image, const FeatureSet& vl_image,
                       const FeatureSet* vl_text, const TrainingConfig& config,
                       const EpochCallback& on_epoch) {
  validate_workspace(target_image, vl_image, vl_text, nullptr);
  TrainingData data{target_image.features, vl_image.features,
                    vl_text ? vl_text->features : Matrix(0, vl_image.dim())};
  return train_maps(data, config, on_epoch);
}

AffineMap ols_fit(const Matrix& x, const Matrix& y, double ridge) {
  if (x.rows() != y.rows()) {
    throw ShapeError("ols_fit: X has " + std::to_string(x.rows()) + " rows, Y has " +
                     std::to_string(y.rows()));
  }
  const Eigen::Index d = x.cols();
  if (x.rows() < d + 1) {
    throw PreconditionError("ols_fit: need at least " + std::to_string(d + 1) +
                            " samples, got " + std::to_string(x.rows()));
  }
  MatrixD xa(x.rows(), d + 1);
  xa.leftCols(d) = x.cast<double>();
  xa.col(d).setOnes();
  MatrixD gram = xa.transpose() * xa;
  gram.diagonal().array() += ridge;
  const MatrixD rhs = xa.transpose() * y.cast<double>();
  Eigen::LDLT<MatrixD> ldlt(gram);
  const VectorD diag = ldlt.vectorD().cwiseAbs();
  if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-14 * std::max(1.0, diag.maxCoeff())) {
    throw DegenerateInputError("ols_fit: design matrix is rank-deficient beyond ridge rescue");
  }
  const MatrixD coef = ldlt.solve(rhs);  // (d+1) x out
  if (!coef.allFinite()) throw NumericalError("ols_fit: non-finite solution");
  Matrix w = coef.topRows(d).transpose().cast<float>();
  Vector b = coef.row(d).transpose().cast<float>();
  return {std::move(w), std::move(b)};
}

}  // namespace textcav
