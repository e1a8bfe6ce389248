#pragma once

#include "cwm/ball_world.hpp"
#include "cwm/json_fields.hpp"
#include "cwm/world_model.hpp"

namespace cwm {

Json env_to_json(const world::EnvConfig& cfg);
/// Strict: unknown keys and invalid values raise ConfigError.
world::EnvConfig env_from_json(const Json& j);

Json model_to_json(const model::ModelConfig& cfg);
model::ModelConfig model_from_json(const Json& j);

Json train_to_json(const model::TrainConfig& cfg);
model::TrainConfig train_from_json(const Json& j);

}  // namespace cwm
