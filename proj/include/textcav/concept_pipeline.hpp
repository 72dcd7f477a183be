#pragma once

// Concept-list hygiene and evaluation against human annotations.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "textcav/cav_engine.hpp"
#include "textcav/feature_store.hpp"

namespace textcav {

inline constexpr double kDefaultDedupThreshold = 0.9;
inline constexpr std::size_t kDefaultCrsTop = 50;
inline constexpr std::size_t kMaxConceptWords = 2;

struct FilterStats {
  std::size_t articles = 0;
  std::size_t plurals = 0;
  std::size_t too_long = 0;
};

/// Drops bare articles, entries with more than two words, and entries that
/// are another entry plus "s"/"es" (case-insensitive). Survivor order is
/// the input order.
ConceptList filter_concepts(const ConceptList& list, FilterStats* stats = nullptr);

/// Greedy near-synonym removal: visits entries shortest first (ties
/// lexicographic) and keeps one only if its cosine similarity to every kept
/// entry is <= threshold. Survivors keep their input order.
ConceptList dedup_concepts(const ConceptList& list, double threshold = kDefaultDedupThreshold,
                           std::size_t* removed = nullptr);

std::size_t word_count(std::string_view text);

struct Annotation {
  std::string class_name;
  std::string text;
  bool relevant = false;
  std::map<std::string, bool> categories;

  bool operator==(const Annotation&) const = default;
};

class AnnotationSet {
 public:
  /// Throws DuplicateError on a second record for the same (class, text).
  void add(Annotation a);
  const Annotation* find(const std::string& class_name, const std::string& text) const;
  std::size_t size() const { return records_.size(); }
  const std::map<std::pair<std::string, std::string>, Annotation>& records() const {
    return records_;
  }

  /// Per-text flags for one class: every category plus "relevant".
  CategoryLabels labels_for(const std::string& class_name) const;

  bool operator==(const AnnotationSet&) const = default;

 private:
  std::map<std::pair<std::string, std::string>, Annotation> records_;
};

AnnotationSet parse_annotations(std::string_view jsonl);
AnnotationSet load_annotations(const std::filesystem::path& path);
std::string serialize_annotations(const AnnotationSet& set);
void save_annotations(const AnnotationSet& set, const std::filesystem::path& path);

/// Fraction of the ranking's top-N concepts annotated relevant to its class.
double crs_score(const AnnotationSet& annotations, const SensitivityRanking& ranking,
                 std::size_t top = kDefaultCrsTop);

/// (count of top-N concepts flagged with `category`, N)
std::pair<std::size_t, std::size_t> category_report(const AnnotationSet& annotations,
                                                    const SensitivityRanking& ranking,
                                                    const std::string& category,
                                                    std::size_t top = kDefaultCrsTop);

/// Request templates for an external concept generator. "{class}" is the
/// placeholder for the class name.
struct PromptTemplate {
  std::string_view name;
  std::string_view text;
};
const std::array<PromptTemplate, 3>& concept_prompt_templates();
std::string render_prompt(const PromptTemplate& t, std::string_view class_name);

}  // namespace textcav
