#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "support.hpp"
#include "textcav/concept_pipeline.hpp"
#include "textcav/errors.hpp"

using namespace textcav;
using namespace textcav::testing;

namespace {

std::vector<std::string> texts(const ConceptList& l) {
  std::vector<std::string> out;
  for (const auto& e : l.entries) out.push_back(e.text);
  return out;
}

ConceptList plain(std::vector<std::string> names) {
  ConceptList l;
  for (auto& n : names) l.entries.push_back({n, std::nullopt, std::nullopt});
  return l;
}

}  // namespace

TEST_SUITE("concept_pipeline") {
  TEST_CASE("filter removes articles, plurals and long phrases") {
    FilterStats stats;
    const ConceptList out = filter_concepts(twelve_concepts(), &stats);
    CHECK(stats.articles == 2);
    CHECK(stats.plurals == 2);
    CHECK(stats.too_long == 1);
    CHECK(texts(out) == std::vector<std::string>{"dog", "box", "snow", "snowfall", "water", "grass field", "tree"});
  }

  TEST_CASE("filter then dedup gives the hand-enumerated survivors") {
    std::size_t removed = 0;
    const ConceptList out = dedup_concepts(filter_concepts(twelve_concepts()), 0.9, &removed);
    CHECK(removed == 1);
    CHECK(texts(out) == twelve_concepts_survivors());
  }

  TEST_CASE("the pipeline is idempotent") {
    const ConceptList once = dedup_concepts(filter_concepts(twelve_concepts()));
    FilterStats stats;
    std::size_t removed = 0;
    const ConceptList twice = dedup_concepts(filter_concepts(once, &stats), 0.9, &removed);
    CHECK(texts(twice) == texts(once));
    CHECK(stats.articles + stats.plurals + stats.too_long + removed == 0);
  }

  TEST_CASE("dedup keeps the shortest of a near-duplicate pair and respects the threshold") {
    ConceptList l;
    l.entries.push_back({"snowy ground", unit({1, 0, 0}), std::nullopt});
    l.entries.push_back({"snow", unit({1, 0.1, 0}), std::nullopt});
    l.entries.push_back({"sky", unit({0, 0, 1}), std::nullopt});
    CHECK(texts(dedup_concepts(l)) == std::vector<std::string>{"snow", "sky"});
    CHECK(dedup_concepts(l, 1.0).size() == 3);
  }

  TEST_CASE("dedup output is pairwise below the threshold on random embeddings") {
    const Matrix e = unit_rows(gaussian(80, 3, 7));
    ConceptList l;
    for (int i = 0; i < 80; ++i) l.entries.push_back({"c" + std::to_string(i), e.row(i).transpose().eval(), std::nullopt});
    const ConceptList out = dedup_concepts(l, 0.9);
    CHECK(out.size() < l.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        double s = 0;
        for (int d = 0; d < 3; ++d) s += double((*out.entries[i].embedding)(d)) * (*out.entries[j].embedding)(d);
        CHECK(s <= 0.9 + 1e-7);
      }
    }
  }

  TEST_CASE("dedup requires embeddings") {
    CHECK_THROWS_AS(dedup_concepts(plain({"x"})), PreconditionError);
  }

  TEST_CASE("plural rule is case-insensitive and needs the singular present") {
    FilterStats stats;
    CHECK(texts(filter_concepts(plain({"Cats", "cat", "glass", "moss"}), &stats)) ==
          std::vector<std::string>{"cat", "glass", "moss"});
    CHECK(stats.plurals == 1);
    CHECK(word_count("  two   words ") == 2);
  }

  TEST_CASE("CRS on exact fixtures") {
    const auto two = annotated_ranking("atelectasis", "biased", 50, 2, 0);
    CHECK(crs_score(two.annotations, two.ranking, 50) == 0.04);
    const auto all = annotated_ranking("effusion", "clean", 50, 50, 0);
    CHECK(crs_score(all.annotations, all.ranking, 50) == 1.0);
  }

  TEST_CASE("CRS lists concepts missing annotations") {
    auto f = annotated_ranking("k", "h", 5, 1, 0);
    AnnotationSet partial;
    for (const auto& [key, a] : f.annotations.records()) {
      if (a.text != "h concept 03") partial.add(a);
    }
    CHECK_THROWS_WITH_AS(crs_score(partial, f.ranking, 5), doctest::Contains("h concept 03"),
                         IncompleteAnnotationError);
    CHECK_THROWS_AS(crs_score(f.annotations, f.ranking, 0), PreconditionError);
    CHECK_THROWS_AS(crs_score(f.annotations, f.ranking, 6), PreconditionError);
  }

  TEST_CASE("category report reproduces 13 of 50 against 44 of 50") {
    const auto clean = annotated_ranking("k", "clean", 50, 10, 13);
    const auto biased = annotated_ranking("k", "biased", 50, 3, 44);
    CHECK(category_report(clean.annotations, clean.ranking, "proxy", 50) == std::pair<std::size_t, std::size_t>{13, 50});
    CHECK(category_report(biased.annotations, biased.ranking, "proxy", 50) == std::pair<std::size_t, std::size_t>{44, 50});
  }

  TEST_CASE("annotation JSONL round trip and duplicate detection") {
    const auto f = annotated_ranking("k", "h", 7, 3, 2);
    const std::string doc = serialize_annotations(f.annotations);
    const AnnotationSet back = parse_annotations(doc);
    CHECK(back == f.annotations);
    CHECK(serialize_annotations(back) == doc);
    CHECK_THROWS_AS(parse_annotations(doc + doc), DuplicateError);
    CHECK_THROWS_AS(parse_annotations("{\"class\":\"k\"}\n"), ParseError);
  }

  TEST_CASE("labels for a class include the relevance flag") {
    const auto f = annotated_ranking("k", "h", 4, 4, 0);
    const CategoryLabels labels = f.annotations.labels_for("k");
    CHECK(labels.size() == 4);
    CHECK(labels.at("h concept 00").at("relevant"));
    CHECK(f.annotations.labels_for("other").empty());
  }

  TEST_CASE("prompt templates carry the class placeholder") {
    for (const auto& t : concept_prompt_templates()) {
      const std::string p = render_prompt(t, "zebra");
      CHECK(p.find("zebra") != std::string::npos);
      CHECK(p.find("{class}") == std::string::npos);
    }
  }
}
