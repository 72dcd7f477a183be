#include "textcav/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "textcav/reports.hpp"
#include "textcav/trainer.hpp"
#include "textcav/workspace.hpp"

namespace textcav {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kMaxPlacementAttempts = 200000;

VectorD random_unit(std::mt19937_64& rng, Eigen::Index dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    VectorD v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = gauss(rng);
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

// Random matrix with orthonormal columns (rows x cols, cols <= rows).
MatrixD random_orthonormal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixD g(rows, rows);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gauss(rng);
  Eigen::HouseholderQR<MatrixD> qr(g);
  MatrixD q = qr.householderQ() * MatrixD::Identity(rows, rows);
  // Fix column signs so the factorization is unique.
  const VectorD d = qr.matrixQR().diagonal();
  for (Eigen::Index c = 0; c < rows; ++c) {
    if (d(c) < 0) q.col(c) *= -1.0;
  }
  return q.leftCols(cols);
}

std::string indexed(const char* prefix, Eigen::Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%lld", prefix, static_cast<long long>(i));
  return buf;
}

std::string filler_name(Eigen::Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "filler_%02lld", static_cast<long long>(i));
  return buf;
}

struct BankBuilder {
  std::vector<VectorD> vectors;
  std::vector<std::string> texts;
  double max_cos;

  bool fits(const VectorD& v, std::size_t skip_from = SIZE_MAX, std::size_t skip_to = 0) const {
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (i >= skip_from && i < skip_to) continue;
      if (vectors[i].dot(v) > max_cos) return false;
    }
    return true;
  }
  std::size_t add(VectorD v, std::string text) {
    vectors.push_back(std::move(v));
    texts.push_back(std::move(text));
    return vectors.size() - 1;
  }
};

Matrix rows_to_matrix(const std::vector<VectorD>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose().cast<float>();
  }
  return out;
}

std::vector<Eigen::Index> keep_rows(const std::vector<bool>& keep) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

template <typename M>
M select_rows(const M& src, const std::vector<Eigen::Index>& idx) {
  M out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]);
  }
  return out;
}

std::size_t rank_of(const std::vector<RankedConcept>& sorted, const std::string& text) {
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].text == text) return i + 1;
  }
  return 0;
}

std::vector<RankedConcept> full_ranking(const SyntheticWorld& w, const ClassifierHead& head,
                                        Eigen::Index k, const AffineMap& h) {
  std::vector<RankedConcept> r = score_concepts(head, k, w.bank, h);
  sort_ranking(r);
  return r;
}

}  // namespace

void WorldParams::validate() const {
  if (vl_dim < 4 || target_dim < 4) throw PreconditionError("synthetic world: dims must be >= 4");
  if (classes < 2) throw PreconditionError("synthetic world: need at least 2 classes");
  if (samples < 100) throw PreconditionError("synthetic world: need at least 100 samples");
  if (attributes < 0 || cues_per_group < 0) {
    throw PreconditionError("synthetic world: negative group sizes");
  }
  if (classes + attributes > vl_dim) {
    throw PreconditionError("synthetic world: need vl_dim >= classes + attributes (" +
                            std::to_string(classes + attributes) + ")");
  }
  if (bank_size < (classes + attributes) * (1 + cues_per_group)) {
    throw PreconditionError("synthetic world: bank_size too small for the concept groups");
  }
  if (!(noise_sigma >= 0.0)) throw PreconditionError("synthetic world: noise must be >= 0");
}

Eigen::Index LabelTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw NotFoundError("label table has no column \"" + name + "\"");
}

bool ConceptGroup::contains(std::size_t bank_index) const {
  return bank_index == anchor || std::find(cues.begin(), cues.end(), bank_index) != cues.end();
}

const ConceptGroup& SyntheticWorld::group(const std::string& name) const {
  for (const auto& g : groups) {
    if (g.name == name) return g;
  }
  throw NotFoundError("synthetic world has no class or attribute \"" + name + "\"");
}

const std::string& SyntheticWorld::planted_concept(const std::string& class_name) const {
  return bank.entries.at(group(class_name).anchor).text;
}

SyntheticWorld gen_world(std::uint64_t seed, Eigen::Index n, Eigen::Index m, Eigen::Index classes,
                         Eigen::Index samples, double noise_sigma) {
  WorldParams p;
  p.seed = seed;
  p.vl_dim = n;
  p.target_dim = m;
  p.classes = classes;
  p.samples = samples;
  p.noise_sigma = noise_sigma;
  p.attributes = std::min<Eigen::Index>(p.attributes, std::max<Eigen::Index>(0, n - classes));
  return gen_world(p);
}

SyntheticWorld gen_world(const WorldParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index n = p.vl_dim;
  const Eigen::Index m = p.target_dim;

  SyntheticWorld w;
  w.params = p;
  for (Eigen::Index k = 0; k < p.classes; ++k) w.class_names.push_back(indexed("class", k));
  for (Eigen::Index a = 0; a < p.attributes; ++a) w.attribute_names.push_back(indexed("attr", a));

  // Concept bank: orthonormal group anchors, cues at a fixed cosine to their
  // anchor, and random fillers, with a cap on pairwise cosine throughout.
  BankBuilder bank{{}, {}, p.max_concept_cosine};
  const Eigen::Index n_groups = p.classes + p.attributes;
  const MatrixD anchors = random_orthonormal(rng, n, n_groups);
  for (Eigen::Index gi = 0; gi < n_groups; ++gi) {
    ConceptGroup g;
    g.is_class = gi < p.classes;
    g.name = g.is_class ? w.class_names[gi] : w.attribute_names[gi - p.classes];
    g.anchor = bank.add(anchors.col(gi), g.name);
    w.groups.push_back(std::move(g));
  }
  const double sin_cue = std::sqrt(std::max(0.0, 1.0 - p.cue_cosine * p.cue_cosine));
  int attempts = 0;
  for (auto& g : w.groups) {
    const VectorD anchor = bank.vectors[g.anchor];
    for (Eigen::Index c = 0; c < p.cues_per_group; ++c) {
      for (;;) {
        if (++attempts > kMaxPlacementAttempts) {
          throw PreconditionError("synthetic world: cannot place concept bank in " +
                                  std::to_string(n) + " dimensions");
        }
        VectorD u = random_unit(rng, n);
        u -= u.dot(anchor) * anchor;
        if (u.norm() < 1e-6) continue;
        u.normalize();
        VectorD cue = p.cue_cosine * anchor + sin_cue * u;
        // The anchor itself sits at exactly cue_cosine.
        if (!bank.fits(cue, g.anchor, g.anchor + 1)) continue;
        g.cues.push_back(bank.add(std::move(cue), g.name + " " + indexed("cue", c + 1)));
        break;
      }
    }
  }
  std::vector<std::size_t> fillers;
  for (Eigen::Index f = 0; static_cast<Eigen::Index>(bank.vectors.size()) < p.bank_size; ++f) {
    for (;;) {
      if (++attempts > kMaxPlacementAttempts) {
        throw PreconditionError("synthetic world: cannot place concept bank in " +
                                std::to_string(n) + " dimensions");
      }
      VectorD v = random_unit(rng, n);
      if (!bank.fits(v)) continue;
      fillers.push_back(bank.add(std::move(v), filler_name(f)));
      break;
    }
  }
  for (std::size_t i = 0; i < bank.vectors.size(); ++i) {
    w.bank.entries.push_back({bank.texts[i], bank.vectors[i].cast<float>(), std::nullopt});
  }
  w.bank.provenance = "synthetic seed " + std::to_string(p.seed);

  // Planted map A = U diag(s) V^T.
  const Eigen::Index r = std::min(n, m);
  const MatrixD u = random_orthonormal(rng, m, r);
  const MatrixD v = random_orthonormal(rng, n, r);
  VectorD s(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    s(i) = p.map_scale_min + (p.map_scale_max - p.map_scale_min) * unif(rng);
  }
  const MatrixD a = u * s.asDiagonal() * v.transpose();
  w.planted_map = a.cast<float>();

  // Labels and vision-language image features.
  w.labels.columns = w.class_names;
  w.labels.columns.insert(w.labels.columns.end(), w.attribute_names.begin(),
                          w.attribute_names.end());
  w.labels.values.resize(p.samples, n_groups);
  std::vector<VectorD> psi_rows;
  psi_rows.reserve(static_cast<std::size_t>(p.samples));
  std::uniform_int_distribution<std::size_t> pick_filler(0, fillers.empty() ? 0 : fillers.size() - 1);
  for (Eigen::Index i = 0; i < p.samples; ++i) {
    VectorD x = VectorD::Zero(n);
    for (Eigen::Index gi = 0; gi < n_groups; ++gi) {
      const bool is_class = gi < p.classes;
      const bool on = unif(rng) < (is_class ? p.class_prevalence : p.attribute_prevalence);
      w.labels.values(i, gi) = on;
      if (on) {
        x += (is_class ? p.class_strength : p.attribute_strength) * bank.vectors[w.groups[gi].anchor];
      }
    }
    if (!fillers.empty()) x += p.background_strength * bank.vectors[fillers[pick_filler(rng)]];
    for (Eigen::Index d = 0; d < n; ++d) x(d) += p.spread * gauss(rng);
    const double norm = x.norm();
    psi_rows.push_back(norm > kMinNorm ? VectorD(x / norm) : random_unit(rng, n));
  }
  const Matrix psi = rows_to_matrix(psi_rows);
  MatrixD phi = psi.cast<double>() * a.transpose();
  if (p.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] += p.noise_sigma * gauss(rng);
  }

  const std::string tag = "synthetic-" + std::to_string(p.seed);
  w.vl_image = {SpaceTag::vl_image, psi, tag + "-vl", true, tag};
  w.target_image = {SpaceTag::target_image, phi.cast<float>(), tag + "-target", false, tag};
  w.vl_text = {SpaceTag::vl_text, rows_to_matrix(bank.vectors), tag + "-vl", true, tag + "-bank"};

  // Clean head: row k follows the image of class k's defining concept.
  w.clean_head.class_names = w.class_names;
  w.clean_head.model_id = tag + "-clean";
  w.clean_head.weights.resize(p.classes, m);
  for (Eigen::Index k = 0; k < p.classes; ++k) {
    VectorD row = a * bank.vectors[w.groups[k].anchor];
    for (Eigen::Index d = 0; d < m; ++d) row(d) += p.head_noise * gauss(rng);
    w.clean_head.weights.row(k) = row.transpose().cast<float>();
  }
  w.clean_head.bias = Vector::Zero(p.classes);
  w.train_count = p.samples - heldout_count_for(p.samples);
  return w;
}

ClassifierHead fit_head_ols(const Matrix& features, const LabelTable& labels,
                            const std::vector<std::string>& class_names,
                            const std::string& model_id) {
  Matrix targets(features.rows(), static_cast<Eigen::Index>(class_names.size()));
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    const Eigen::Index col = labels.column(class_names[k]);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      targets(i, static_cast<Eigen::Index>(k)) = labels.values(i, col) ? 1.0f : -1.0f;
    }
  }
  const AffineMap fit = ols_fit(features, targets);
  ClassifierHead head;
  head.weights = fit.weights;
  head.bias = fit.bias;
  head.class_names = class_names;
  head.model_id = model_id;
  return head;
}

SyntheticWorld inject_bias(const SyntheticWorld& world, const BiasSpec& spec) {
  const Eigen::Index target_col = world.labels.column(spec.target_class);
  const Eigen::Index proxy_col = world.labels.column(spec.proxy_attribute);
  if (std::find(world.class_names.begin(), world.class_names.end(), spec.target_class) ==
      world.class_names.end()) {
    throw PreconditionError("bias target \"" + spec.target_class + "\" is not a class");
  }
  const Eigen::Index total = world.labels.rows();
  std::vector<bool> keep(static_cast<std::size_t>(total), true);
  Eigen::Index positives_left = 0;
  for (Eigen::Index i = 0; i < world.train_count; ++i) {
    const bool pos = world.labels.values(i, target_col);
    const bool proxy = world.labels.values(i, proxy_col);
    if (pos && !proxy) keep[static_cast<std::size_t>(i)] = false;
    if (pos && proxy) ++positives_left;
  }
  if (positives_left == 0) {
    throw PreconditionError("bias filter removes every training positive of \"" +
                            spec.target_class + "\"");
  }
  const auto idx = keep_rows(keep);

  SyntheticWorld out = world;
  out.bias = spec;
  out.labels.values = select_rows(world.labels.values, idx);
  out.target_image.features = select_rows(world.target_image.features, idx);
  out.vl_image.features = select_rows(world.vl_image.features, idx);
  out.train_count =
      world.train_count - static_cast<Eigen::Index>(std::count(keep.begin(), keep.begin() + world.train_count, false));

  LabelTable train_labels;
  train_labels.columns = out.labels.columns;
  train_labels.values = out.labels.values.topRows(out.train_count);
  out.biased_head = fit_head_ols(out.target_image.features.topRows(out.train_count), train_labels,
                                 out.class_names,
                                 "synthetic-" + std::to_string(world.params.seed) + "-biased");
  return out;
}

ClassifierHead random_head(std::uint64_t seed, Eigen::Index classes, Eigen::Index dim,
                           std::vector<std::string> class_names) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ClassifierHead head;
  head.weights.resize(classes, dim);
  for (Eigen::Index i = 0; i < head.weights.size(); ++i) {
    head.weights.data()[i] = static_cast<float>(gauss(rng));
  }
  head.bias = Vector::Zero(classes);
  head.class_names = std::move(class_names);
  head.model_id = "random-" + std::to_string(seed);
  return head;
}

RecoveryReport evaluate_head_recovery(const SyntheticWorld& world, const ClassifierHead& head,
                                      const AffineMap& h) {
  RecoveryReport out;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < world.class_names.size(); ++k) {
    const auto ranking = full_ranking(world, head, static_cast<Eigen::Index>(k), h);
    ClassRecovery cr{world.class_names[k],
                     rank_of(ranking, world.planted_concept(world.class_names[k]))};
    if (cr.hit()) ++hits;
    out.classes.push_back(std::move(cr));
  }
  out.hit_rate = static_cast<double>(hits) / static_cast<double>(world.class_names.size());
  return out;
}

RecoveryReport evaluate_recovery(const SyntheticWorld& world, const AffineMap& h,
                                 std::size_t category_top) {
  RecoveryReport out = evaluate_head_recovery(world, world.clean_head, h);
  if (!world.bias || !world.biased_head) return out;

  const auto& spec = *world.bias;
  const Eigen::Index k = world.clean_head.class_index(spec.target_class);
  const ConceptGroup& proxy = world.group(spec.proxy_attribute);
  const auto clean = full_ranking(world, world.clean_head, k, h);
  const auto biased = full_ranking(world, *world.biased_head, k, h);

  auto count_proxy = [&](const std::vector<RankedConcept>& r) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < std::min(category_top, r.size()); ++i) {
      for (std::size_t b = 0; b < world.bank.size(); ++b) {
        if (world.bank.entries[b].text == r[i].text && proxy.contains(b)) ++c;
      }
    }
    return c;
  };

  BiasRecovery br;
  br.target_class = spec.target_class;
  br.proxy_concept = world.bank.entries[proxy.anchor].text;
  br.proxy_rank_clean = rank_of(clean, br.proxy_concept);
  br.proxy_rank_biased = rank_of(biased, br.proxy_concept);
  br.planted_rank_biased = rank_of(biased, world.planted_concept(spec.target_class));
  br.category_top = category_top;
  br.proxy_category_count_clean = count_proxy(clean);
  br.proxy_category_count_biased = count_proxy(biased);
  out.bias = br;
  return out;
}

AnnotationSet world_annotations(const SyntheticWorld& world) {
  AnnotationSet out;
  for (const auto& cls : world.class_names) {
    const ConceptGroup& cg = world.group(cls);
    for (std::size_t b = 0; b < world.bank.size(); ++b) {
      Annotation a;
      a.class_name = cls;
      a.text = world.bank.entries[b].text;
      a.relevant = cg.contains(b);
      for (const auto& attr : world.attribute_names) {
        a.categories[attr] = world.group(attr).contains(b);
      }
      out.add(std::move(a));
    }
  }
  return out;
}

void export_world(const SyntheticWorld& world, const fs::path& dir) {
  const WorkspaceLayout layout{dir};
  fs::create_directories(dir);
  save_feature_set(world.target_image, layout.target_image());
  save_feature_set(world.vl_image, layout.vl_image());
  save_feature_set(world.vl_text, layout.vl_text());
  save_head(world.clean_head, layout.head("clean"));
  if (world.biased_head) save_head(*world.biased_head, layout.head("biased"));
  save_concepts(world.bank, layout.concepts());
  save_annotations(world_annotations(world), layout.annotations());
  write_fmx(world.planted_map, dir / "planted_map.fmx");

  json planted = json::object();
  for (const auto& c : world.class_names) planted[c] = world.planted_concept(c);
  json attrs = json::object();
  for (const auto& a : world.attribute_names) attrs[a] = world.bank.entries[world.group(a).anchor].text;
  const auto& p = world.params;
  json summary = {
      {"seed", p.seed},
      {"vl_dim", p.vl_dim},
      {"target_dim", p.target_dim},
      {"classes", world.class_names},
      {"attributes", world.attribute_names},
      {"planted_concepts", planted},
      {"attribute_concepts", attrs},
      {"samples", world.labels.rows()},
      {"train_count", world.train_count},
      {"noise_sigma", p.noise_sigma},
      {"bank_size", world.bank.size()},
  };
  summary["bias"] = world.bias ? json{{"target_class", world.bias->target_class},
                                      {"proxy_attribute", world.bias->proxy_attribute}}
                               : json(nullptr);
  write_file_locked(dir / "world.json", summary.dump(2) + "\n");

  Matrix labels(world.labels.rows(), world.labels.values.cols());
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index j = 0; j < labels.cols(); ++j) labels(i, j) = world.labels.values(i, j) ? 1.f : 0.f;
  }
  write_fmx(labels, dir / "labels.fmx");
}

}  // namespace textcav
