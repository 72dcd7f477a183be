#pragma once

// Hand-built fixtures shared by unit and acceptance tests.

#include <cmath>
#include <string>
#include <vector>

#include "textcav/cav_engine.hpp"
#include "textcav/concept_pipeline.hpp"

namespace textcav::testing {

// Twelve concepts exercising every list rule once or twice. Embeddings are
// standard basis vectors of R^12 except "snowfall", which sits at cosine
// 0.95 from "snow".
inline ConceptList twelve_concepts() {
  const std::vector<std::string> texts = {"the",  "dog",      "dogs",  "box",         "boxes", "red brick wall",
                                          "snow", "snowfall", "water", "grass field", "a",     "tree"};
  ConceptList list;
  list.provenance = "fixture";
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Vector e = Vector::Zero(12);
    e(static_cast<Eigen::Index>(i)) = 1.0f;
    list.entries.push_back({texts[i], e, std::nullopt});
  }
  Vector snowfall = Vector::Zero(12);
  snowfall(6) = 0.95f;
  snowfall(7) = static_cast<float>(std::sqrt(1.0 - 0.95 * 0.95));
  list.entries[7].embedding = snowfall;
  return list;
}

inline const std::vector<std::string>& twelve_concepts_survivors() {
  static const std::vector<std::string> kSurvivors = {"dog", "box", "snow", "water", "grass field", "tree"};
  return kSurvivors;
}

// A ranking of `top` concepts "c00".."cNN" for class `cls` with the given
// indices annotated relevant, and `proxy` indices flagged in category "proxy".
struct AnnotatedRanking {
  SensitivityRanking ranking;
  AnnotationSet annotations;
};

inline AnnotatedRanking annotated_ranking(const std::string& cls, const std::string& head_id,
                                          std::size_t top, std::size_t relevant, std::size_t proxy) {
  AnnotatedRanking out;
  out.ranking.class_name = cls;
  out.ranking.map_id = "fixture-map";
  out.ranking.head_id = head_id;
  for (std::size_t i = 0; i < top; ++i) {
    char text[32];
    std::snprintf(text, sizeof text, "%s concept %02zu", head_id.c_str(), i);
    out.ranking.entries.push_back({text, 1.0 - 0.01 * double(i)});
    Annotation a;
    a.class_name = cls;
    a.text = text;
    // Spread the flagged concepts through the list rather than at the top.
    a.relevant = (i * relevant) / top != ((i + 1) * relevant) / top;
    a.categories["proxy"] = (i * proxy) / top != ((i + 1) * proxy) / top;
    out.annotations.add(a);
  }
  return out;
}

}  // namespace textcav::testing
