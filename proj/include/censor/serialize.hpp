#pragma once

#include "censor/censoring.hpp"
#include "censor/training.hpp"

#include <json.hpp>

namespace censor {

nlohmann::json censor_config_to_json(const CensorConfig& cfg);
CensorConfig censor_config_from_json(const nlohmann::json& j);

// One JSON-lines record per epoch for the metrics stream.
nlohmann::json epoch_record_to_json(const EpochRecord& rec);

}  // namespace censor
