#include "textcav/concept_pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace textcav {
using json = nlohmann::json;

std::size_t word_count(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::size_t n = 0;
  std::string w;
  while (is >> w) ++n;
  return n;
}

ConceptList filter_concepts(const ConceptList& list, FilterStats* stats) {
  FilterStats local;
  static const std::set<std::string> kArticles = {"a", "an", "the"};

  std::vector<const ConceptEntry*> kept;
  for (const auto& e : list.entries) {
    const std::string norm = normalize_concept_text(e.text);
    if (kArticles.count(norm)) {
      ++local.articles;
    } else if (word_count(norm) > kMaxConceptWords) {
      ++local.too_long;
    } else {
      kept.push_back(&e);
    }
  }

  std::set<std::string> present;
  for (const auto* e : kept) present.insert(normalize_concept_text(e->text));
  auto is_plural = [&](const std::string& norm) {
    for (std::string_view suffix : {"es", "s"}) {
      if (norm.size() > suffix.size() && norm.ends_with(suffix) &&
          present.count(norm.substr(0, norm.size() - suffix.size()))) {
        return true;
      }
    }
    return false;
  };

  ConceptList out;
  out.provenance = list.provenance;
  for (const auto* e : kept) {
    if (is_plural(normalize_concept_text(e->text))) {
      ++local.plurals;
    } else {
      out.entries.push_back(*e);
    }
  }
  if (stats) *stats = local;
  return out;
}

ConceptList dedup_concepts(const ConceptList& list, double threshold, std::size_t* removed) {
  for (const auto& e : list.entries) {
    if (!e.embedding) {
      throw PreconditionError("dedup_concepts: concept \"" + e.text + "\" has no embedding");
    }
  }
  std::vector<std::size_t> order(list.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = list.entries[a].text;
    const auto& tb = list.entries[b].text;
    if (ta.size() != tb.size()) return ta.size() < tb.size();
    return ta < tb;
  });

  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const Vector& v = *list.entries[i].embedding;
    const bool distinct = std::all_of(kept.begin(), kept.end(), [&](std::size_t j) {
      return cosine_similarity(v, *list.entries[j].embedding) <= threshold;
    });
    if (distinct) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());

  ConceptList out;
  out.provenance = list.provenance;
  for (std::size_t i : kept) out.entries.push_back(list.entries[i]);
  if (removed) *removed = list.size() - kept.size();
  return out;
}

void AnnotationSet::add(Annotation a) {
  auto key = std::make_pair(a.class_name, a.text);
  if (records_.count(key)) {
    throw DuplicateError("duplicate annotation for class \"" + a.class_name + "\", text \"" +
                         a.text + "\"");
  }
  records_.emplace(std::move(key), std::move(a));
}

const Annotation* AnnotationSet::find(const std::string& class_name,
                                      const std::string& text) const {
  const auto it = records_.find({class_name, text});
  return it == records_.end() ? nullptr : &it->second;
}

CategoryLabels AnnotationSet::labels_for(const std::string& class_name) const {
  CategoryLabels out;
  for (const auto& [key, a] : records_) {
    if (key.first != class_name) continue;
    auto& flags = out[a.text];
    flags = a.categories;
    flags["relevant"] = a.relevant;
  }
  return out;
}

AnnotationSet parse_annotations(std::string_view jsonl) {
  AnnotationSet out;
  std::istringstream is{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "annotations line " + std::to_string(line_no);
    try {
      const json rec = json::parse(line);
      Annotation a;
      a.class_name = rec.at("class").get<std::string>();
      a.text = rec.at("text").get<std::string>();
      a.relevant = rec.at("relevant").get<bool>();
      if (rec.contains("categories") && !rec.at("categories").is_null()) {
        a.categories = rec.at("categories").get<std::map<std::string, bool>>();
      }
      out.add(std::move(a));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const DuplicateError& e) {
      throw DuplicateError(where + ": " + e.what());
    }
  }
  return out;
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("missing file " + path.string());
  return parse_annotations(read_file_locked(path));
}

std::string serialize_annotations(const AnnotationSet& set) {
  std::string out;
  for (const auto& [key, a] : set.records()) {
    json rec = {{"class", a.class_name},
                {"text", a.text},
                {"relevant", a.relevant},
                {"categories", a.categories}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_annotations(const AnnotationSet& set, const std::filesystem::path& path) {
  write_file_locked(path, serialize_annotations(set));
}

namespace {

std::vector<const Annotation*> top_annotations(const AnnotationSet& annotations,
                                               const SensitivityRanking& ranking,
                                               std::size_t top) {
  if (top == 0) throw PreconditionError("top must be >= 1");
  if (ranking.entries.size() < top) {
    throw PreconditionError("ranking for \"" + ranking.class_name + "\" has only " +
                            std::to_string(ranking.entries.size()) + " entries, need " +
                            std::to_string(top));
  }
  std::vector<const Annotation*> out;
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < top; ++i) {
    const auto* a = annotations.find(ranking.class_name, ranking.entries[i].text);
    if (!a) missing.push_back(ranking.entries[i].text);
    out.push_back(a);
  }
  if (!missing.empty()) {
    std::string msg = "missing annotations for class \"" + ranking.class_name + "\":";
    for (const auto& t : missing) msg += "\n  " + t;
    throw IncompleteAnnotationError(msg);
  }
  return out;
}

}  // namespace

double crs_score(const AnnotationSet& annotations, const SensitivityRanking& ranking,
                 std::size_t top) {
  const auto recs = top_annotations(annotations, ranking, top);
  const auto relevant =
      std::count_if(recs.begin(), recs.end(), [](const Annotation* a) { return a->relevant; });
  return static_cast<double>(relevant) / static_cast<double>(top);
}

std::pair<std::size_t, std::size_t> category_report(const AnnotationSet& annotations,
                                                    const SensitivityRanking& ranking,
                                                    const std::string& category,
                                                    std::size_t top) {
  const auto recs = top_annotations(annotations, ranking, top);
  std::size_t count = 0;
  for (const auto* a : recs) {
    const auto it = a->categories.find(category);
    if (it != a->categories.end() && it->second) ++count;
  }
  return {count, top};
}

const std::array<PromptTemplate, 3>& concept_prompt_templates() {
  static const std::array<PromptTemplate, 3> kTemplates = {{
      {"surroundings",
       "List the things most commonly seen around a {class}. Answer with one short phrase per "
       "line and nothing else."},
      {"parts",
       "List the most important visual elements or parts of a {class}. Answer with one short "
       "phrase per line and nothing else."},
      {"superclasses",
       "List the superclasses of a {class}. Answer with one short phrase per line and nothing "
       "else."},
  }};
  return kTemplates;
}

std::string render_prompt(const PromptTemplate& t, std::string_view class_name) {
  std::string out(t.text);
  const std::string_view placeholder = "{class}";
  for (std::size_t pos = out.find(placeholder); pos != std::string::npos;
       pos = out.find(placeholder, pos + class_name.size())) {
    out.replace(pos, placeholder.size(), class_name);
  }
  return out;
}

}  // namespace textcav
