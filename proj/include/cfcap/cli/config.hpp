// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "cfcap/trainer/pipeline.hpp"

namespace cfcap::cli {

// Reads a JSON config file. Missing files, parse errors and invalid fields
// all raise ConfigError.
trainer::ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace cfcap::cli
