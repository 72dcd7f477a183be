#pragma once

// JSON documents exchanged by the CLI and the service. Floating-point
// values in reports are rounded to 9 significant digits so golden files
// compare equal across platforms.

#include <json.hpp>

#include "textcav/cav_engine.hpp"
#include "textcav/concept_pipeline.hpp"
#include "textcav/trainer.hpp"

namespace textcav {

double round_sig9(double x);

nlohmann::json to_json(const LossBreakdown& l, double cycle_weight);
nlohmann::json to_json(const TrainReport& r);
nlohmann::json to_json(const TrainingConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainingConfig training_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SensitivityRanking& r);
SensitivityRanking ranking_from_json(const nlohmann::json& j);
/// The canonical ranking export, newline-terminated.
std::string ranking_document(const SensitivityRanking& r);

nlohmann::json to_json(const ContrastReport& r);

}  // namespace textcav
