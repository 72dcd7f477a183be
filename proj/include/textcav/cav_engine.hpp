#pragma once

// Text-derived concept activation vectors and class sensitivities.
//
// A concept's CAV is h applied to its unit text embedding (optionally
// re-normalized). For a linear head the gradient of logit k with respect to
// the penultimate activations is row k of the weight matrix, independent of
// the input, so a sensitivity is just a dot product.

#include <map>
#include <string>
#include <vector>

#include "textcav/affine_map.hpp"
#include "textcav/feature_store.hpp"

namespace textcav {

struct CavOptions {
  bool normalize_cavs = true;
};

struct TextCAV {
  std::string concept_text;
  Vector vector;
};

struct RankedConcept {
  std::string text;
  double score = 0.0;

  bool operator==(const RankedConcept&) const = default;
};

/// Entries sorted by score descending, ties by ascending text.
struct SensitivityRanking {
  std::string class_name;
  std::string map_id;
  std::string head_id;
  std::vector<RankedConcept> entries;

  bool operator==(const SensitivityRanking&) const = default;
};

TextCAV make_textcav(const ConceptEntry& entry, const AffineMap& h,
                     const CavOptions& options = {});

Vector head_gradient(const ClassifierHead& head, Eigen::Index k);

/// W_k . a + b_k
double logit(const ClassifierHead& head, Eigen::Index k, const Vector& activation);

double directional_derivative(const Vector& gradient, const TextCAV& cav);

/// Canonical ranking order.
bool ranks_before(const RankedConcept& a, const RankedConcept& b);
void sort_ranking(std::vector<RankedConcept>& entries);

/// Scores every concept for class k, in input order.
std::vector<RankedConcept> score_concepts(const ClassifierHead& head, Eigen::Index k,
                                          const ConceptList& concepts, const AffineMap& h,
                                          const CavOptions& options = {});

SensitivityRanking rank_concepts(const ClassifierHead& head, Eigen::Index k,
                                 const ConceptList& concepts, const AffineMap& h,
                                 std::size_t top, const CavOptions& options = {});

/// 1-based position `candidate` would take in `sorted`, ignoring any entry
/// with the same text.
std::size_t would_be_rank(const std::vector<RankedConcept>& sorted,
                          const RankedConcept& candidate);

/// concept text -> category name -> flag
using CategoryLabels = std::map<std::string, std::map<std::string, bool>>;

struct ContrastSide {
  std::string head_id;
  std::vector<std::string> texts;
  std::map<std::string, std::size_t> category_counts;
  std::vector<std::string> unlabeled;

  double fraction(const std::string& category, std::size_t top) const;
};

struct ContrastReport {
  std::string class_name;
  std::size_t top = 0;
  std::vector<std::string> categories;
  ContrastSide a;
  ContrastSide b;
  std::vector<std::string> only_in_a;
  std::vector<std::string> only_in_b;

  std::size_t set_difference_size() const { return only_in_a.size() + only_in_b.size(); }
};

ContrastReport compare_models(const SensitivityRanking& a, const SensitivityRanking& b,
                              const CategoryLabels& labels);

}  // namespace textcav
