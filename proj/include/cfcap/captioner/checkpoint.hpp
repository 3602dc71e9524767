// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

#include "cfcap/captioner/model.hpp"

namespace cfcap::captioner {

inline constexpr int kCheckpointVersion = 1;

// Self-describing checkpoint: format tag, version, model config, every
// tensor by canonical name and a training-stage tag ("init", "stage1",
// "stage2"). Extra fields (variant, alpha, ...) go into `metadata`.
struct Checkpoint {
  ModelParams params;
  std::string stage = "init";
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

nlohmann::ordered_json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cfcap::captioner
