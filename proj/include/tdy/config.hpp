#pragma once

#include <string>

#include "tdy/model.hpp"
#include "tdy/synth.hpp"
#include "tdy/train.hpp"

namespace tdy {

/// Application configuration: `key = value` lines under [model], [train] and
/// [synth] sections. Every key mirrors a field of ModelConfig, TrainConfig or
/// SynthSpec; unknown sections or keys are errors. `#` starts a comment line.
struct AppConfig {
    ModelConfig model;
    TrainConfig train;
    SynthSpec synth;
};

AppConfig parse_app_config(const std::string& text);
AppConfig load_app_config(const std::string& path);

} // namespace tdy
