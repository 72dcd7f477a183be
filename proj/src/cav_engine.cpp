#include "textcav/cav_engine.hpp"

#include <algorithm>
#include <set>

namespace textcav {

TextCAV make_textcav(const ConceptEntry& entry, const AffineMap& h, const CavOptions& options) {
  if (!entry.embedding) {
    throw PreconditionError("concept \"" + entry.text + "\" has no embedding");
  }
  if (entry.embedding->size() != h.in_dim()) {
    throw ShapeError("concept \"" + entry.text + "\" embedding has length " +
                     std::to_string(entry.embedding->size()) + ", map expects " +
                     std::to_string(h.in_dim()));
  }
  Vector mapped = h.apply(*entry.embedding);
  if (!(l2_norm(mapped) > kMinNorm)) {
    throw DegenerateInputError("degenerate CAV for \"" + entry.text + "\": h maps it to zero");
  }
  TextCAV cav{entry.text, options.normalize_cavs ? l2_normalize(mapped) : std::move(mapped)};
  if (!cav.vector.allFinite()) throw NumericalError("non-finite CAV for \"" + entry.text + "\"");
  return cav;
}

Vector head_gradient(const ClassifierHead& head, Eigen::Index k) {
  if (k < 0 || k >= head.num_classes()) {
    throw IndexError("class index " + std::to_string(k) + " out of range [0, " +
                     std::to_string(head.num_classes()) + ")");
  }
  return head.weights.row(k).transpose();
}

double logit(const ClassifierHead& head, Eigen::Index k, const Vector& activation) {
  return dot(head_gradient(head, k), activation) + static_cast<double>(head.bias(k));
}

double directional_derivative(const Vector& gradient, const TextCAV& cav) {
  return dot(gradient, cav.vector);
}

bool ranks_before(const RankedConcept& a, const RankedConcept& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.text < b.text;
}

void sort_ranking(std::vector<RankedConcept>& entries) {
  std::sort(entries.begin(), entries.end(), ranks_before);
}

std::vector<RankedConcept> score_concepts(const ClassifierHead& head, Eigen::Index k,
                                          const ConceptList& concepts, const AffineMap& h,
                                          const CavOptions& options) {
  const Vector grad = head_gradient(head, k);
  if (h.out_dim() != grad.size()) {
    throw ShapeError("map output dim " + std::to_string(h.out_dim()) +
                     " differs from head feature dim " + std::to_string(grad.size()));
  }
  std::vector<RankedConcept> out;
  out.reserve(concepts.size());
  for (const auto& c : concepts.entries) {
    const TextCAV cav = make_textcav(c, h, options);
    out.push_back({c.text, directional_derivative(grad, cav)});
  }
  return out;
}

SensitivityRanking rank_concepts(const ClassifierHead& head, Eigen::Index k,
                                 const ConceptList& concepts, const AffineMap& h,
                                 std::size_t top, const CavOptions& options) {
  if (concepts.empty()) throw PreconditionError("rank_concepts: empty concept list");
  if (top < 1) throw PreconditionError("rank_concepts: top must be >= 1");
  SensitivityRanking r;
  r.class_name = head.class_names.at(static_cast<std::size_t>(k));
  r.entries = score_concepts(head, k, concepts, h, options);
  sort_ranking(r.entries);
  if (r.entries.size() > top) r.entries.resize(top);
  return r;
}

std::size_t would_be_rank(const std::vector<RankedConcept>& sorted,
                          const RankedConcept& candidate) {
  std::size_t ahead = 0;
  for (const auto& e : sorted) {
    if (e.text == candidate.text) continue;
    if (ranks_before(e, candidate)) ++ahead;
  }
  return ahead + 1;
}

double ContrastSide::fraction(const std::string& category, std::size_t top) const {
  if (top == 0) return 0.0;
  const auto it = category_counts.find(category);
  return it == category_counts.end() ? 0.0
                                     : static_cast<double>(it->second) / static_cast<double>(top);
}

ContrastReport compare_models(const SensitivityRanking& a, const SensitivityRanking& b,
                              const CategoryLabels& labels) {
  if (a.entries.size() != b.entries.size()) {
    throw PreconditionError("compare_models: rankings truncated to different sizes (" +
                            std::to_string(a.entries.size()) + " vs " +
                            std::to_string(b.entries.size()) + ")");
  }
  ContrastReport out;
  out.class_name = a.class_name;
  out.top = a.entries.size();

  std::set<std::string> categories;
  for (const auto& [text, flags] : labels) {
    for (const auto& [name, _] : flags) categories.insert(name);
  }
  out.categories.assign(categories.begin(), categories.end());

  auto fill = [&](const SensitivityRanking& r, ContrastSide& side) {
    side.head_id = r.head_id;
    for (const auto& name : out.categories) side.category_counts[name] = 0;
    for (const auto& e : r.entries) {
      side.texts.push_back(e.text);
      const auto it = labels.find(e.text);
      if (it == labels.end()) {
        side.unlabeled.push_back(e.text);
        continue;
      }
      for (const auto& [name, flag] : it->second) {
        if (flag) ++side.category_counts[name];
      }
    }
  };
  fill(a, out.a);
  fill(b, out.b);

  const std::set<std::string> in_a(out.a.texts.begin(), out.a.texts.end());
  const std::set<std::string> in_b(out.b.texts.begin(), out.b.texts.end());
  for (const auto& t : out.a.texts) {
    if (!in_b.count(t)) out.only_in_a.push_back(t);
  }
  for (const auto& t : out.b.texts) {
    if (!in_a.count(t)) out.only_in_b.push_back(t);
  }
  return out;
}

}  // namespace textcav
