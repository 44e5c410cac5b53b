#pragma once

// Flat JSON documents for engine and active-learning settings. Keys missing
// from a document keep their current value; unknown keys are ignored.

#include <json.hpp>

#include "sstsne/activelearn.hpp"
#include "sstsne/engine.hpp"

namespace sstsne {

void update_from_json(TsneConfig& config, const nlohmann::json& doc);
void update_from_json(ALConfig& config, const nlohmann::json& doc);
nlohmann::json to_json(const TsneConfig& config);
nlohmann::json to_json(const ALConfig& config);

}  // namespace sstsne
