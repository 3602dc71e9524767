// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cfcap/scenegen/world.hpp"

namespace cfcap::scenegen {

// One scene with its counterfactual. `sample.cf_caption` stays empty until a
// stage-1 model has been run over the split.
struct SceneRecord {
  std::uint64_t scene_seed = 0;
  CounterfactualSample sample;
  std::string group;  // biased splits: "A", "B" or "other"

  bool operator==(const SceneRecord& o) const;
};

struct Dataset {
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> validation;
  std::vector<SceneRecord> test;
};

// Generates one scene from its own seed and picks the entity to intervene
// uniformly among its spans (or `forced_object` when present in the scene).
SceneRecord make_record(const WorldConfig& config, const Vocabulary& vocab, std::uint64_t scene_seed,
                        const SceneConstraints& constraints = {}, int forced_object = -1);

// Scene seeds are consecutive per dataset, so splits never share a seed.
Dataset build_dataset(const WorldConfig& config);

// Class-A/class-B scenes at ratio_a:ratio_b for training and the reverse for
// validation and test, plus scenes with neither class. Evaluation splits
// intervene on the class object.
Dataset build_biased_split(const WorldConfig& config, const BiasSpec& bias);

nlohmann::ordered_json record_to_json(const SceneRecord& record);
SceneRecord record_from_json(const nlohmann::json& j, int grid_height, int grid_width);

void write_split(const std::filesystem::path& path, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_split(const std::filesystem::path& path, int grid_height, int grid_width);

// Dataset directory: train/validation/test.jsonl, optional bias_*.jsonl and
// manifest.json (config hash, vocabulary, split membership by scene seed).
struct DatasetBundle {
  WorldConfig config;
  Dataset data;
  std::optional<BiasSpec> bias;
  std::optional<Dataset> biased;
};

void write_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle read_dataset(const std::filesystem::path& dir);

// Fills cf_caption for every record using the stage-1 model.
void attach_cf_captions(const captioner::CaptionModel& stage1_model, std::vector<SceneRecord>& records,
                        const captioner::DecodeConfig& decode = {});

std::vector<CounterfactualSample> samples_of(const std::vector<SceneRecord>& records);

}  // namespace cfcap::scenegen
