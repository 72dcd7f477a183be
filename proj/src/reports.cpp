#include "textcav/reports.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace textcav {
using json = nlohmann::json;

double round_sig9(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

json to_json(const LossBreakdown& l, double cycle_weight) {
  return {
      {"reconstruction", round_sig9(l.reconstruction)},
      {"cycle_target", round_sig9(l.cycle_target)},
      {"cycle_vl_image", round_sig9(l.cycle_vl_image)},
      {"cycle_vl_text", round_sig9(l.cycle_vl_text)},
      {"cycle", round_sig9(l.cycle())},
      {"total", round_sig9(l.total(cycle_weight))},
  };
}

json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json je = {{"epoch", e.epoch}, {"train", to_json(e.train, r.cycle_weight)}};
    je["heldout"] = e.heldout ? to_json(*e.heldout, r.cycle_weight) : json(nullptr);
    epochs.push_back(std::move(je));
  }
  return {
      {"epochs", std::move(epochs)},
      {"train_count", r.train_count},
      {"heldout_count", r.heldout_count},
      {"cycle_weight", r.cycle_weight},
      {"wall_time_seconds", round_sig9(r.wall_time_seconds)},
  };
}

json to_json(const TrainingConfig& c) {
  return {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"cycle_weight", c.cycle_weight},
      {"cycle_squared", c.cycle_squared},
      {"seed", c.seed},
  };
}

TrainingConfig training_config_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("training config must be a JSON object");
  TrainingConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "cycle_weight" || key == "lambda") c.cycle_weight = value.get<double>();
      else if (key == "cycle_squared") c.cycle_squared = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ParseError("unknown training config key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const SensitivityRanking& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"text", e.text}, {"score", round_sig9(e.score)}});
  }
  return {
      {"class", r.class_name},
      {"map_id", r.map_id},
      {"head_id", r.head_id},
      {"entries", std::move(entries)},
  };
}

SensitivityRanking ranking_from_json(const json& j) {
  SensitivityRanking r;
  try {
    r.class_name = j.at("class").get<std::string>();
    r.map_id = j.value("map_id", "");
    r.head_id = j.value("head_id", "");
    for (const auto& e : j.at("entries")) {
      r.entries.push_back({e.at("text").get<std::string>(), e.at("score").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("ranking document: ") + e.what());
  }
  return r;
}

std::string ranking_document(const SensitivityRanking& r) { return to_json(r).dump(2) + "\n"; }

json to_json(const ContrastReport& r) {
  auto side = [&](const ContrastSide& s) {
    json counts = json::object();
    json fractions = json::object();
    for (const auto& c : r.categories) {
      counts[c] = s.category_counts.count(c) ? s.category_counts.at(c) : 0;
      fractions[c] = round_sig9(s.fraction(c, r.top));
    }
    return json{{"head_id", s.head_id},
                {"texts", s.texts},
                {"category_counts", counts},
                {"category_fractions", fractions},
                {"unlabeled", s.unlabeled}};
  };
  return {
      {"class", r.class_name},
      {"top", r.top},
      {"categories", r.categories},
      {"a", side(r.a)},
      {"b", side(r.b)},
      {"only_in_a", r.only_in_a},
      {"only_in_b", r.only_in_b},
      {"set_difference_size", r.set_difference_size()},
  };
}

}  // namespace textcav
