// SPDX-License-Identifier: Apache-2.0
#include "cfcap/cli/config.hpp"

#include <fstream>

namespace cfcap::cli {

trainer::ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  return trainer::experiment_from_json(j);
}

}  // namespace cfcap::cli
