// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cfcap/captioner/decode.hpp"
#include "cfcap/metrics/report.hpp"
#include "cfcap/scenegen/dataset.hpp"
#include "cfcap/trainer/trainer.hpp"

namespace cfcap::trainer {

struct EvalConfig {
  captioner::DecodeConfig decode;  // caption used for CHAIR_s, BLEU-4, ROUGE-L
  int top_n = 5;                   // candidates for P@5 / nDCG@5
  bool interpretability = true;
  int probes_per_sample = 1;
  std::uint64_t probe_seed = 0;

  void validate() const;
};

// Everything a run depends on. The model section only carries layer sizes;
// vocabulary, grid and length come from the world.
struct ExperimentConfig {
  scenegen::WorldConfig world = scenegen::WorldConfig::shortcut_world();
  std::optional<scenegen::BiasSpec> bias;  // when set, train and test on the biased split
  captioner::ModelConfig model;
  int stages = 2;
  TrainConfig stage1 = TrainConfig::stage1_defaults();
  TrainConfig stage2 = TrainConfig::stage2_defaults();
  captioner::DecodeConfig cf_decode;  // produces the counterfactual captions
  EvalConfig eval;

  void validate() const;
  captioner::ModelConfig resolved_model() const;
  // "stage1", "baseline" (stage 2 at alpha = 1), "TE" or "NDE".
  std::string method() const;
};

nlohmann::ordered_json decode_config_to_json(const captioner::DecodeConfig& c);
captioner::DecodeConfig decode_config_from_json(const nlohmann::json& j, const std::string& section);
nlohmann::ordered_json eval_config_to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json experiment_to_json(const ExperimentConfig& c);
// Sections: world, bias (optional), model, train {stages, stage1, stage2,
// cf_decode}, eval. Missing fields keep their defaults; unknown or mistyped
// fields throw ConfigError naming the field.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Hallucination metrics on the counterfactual test images, text metrics on
// the factual ones, and the biased error rates when `bias` is set.
metrics::MetricsReport evaluate_model(const captioner::CaptionModel& model, const scenegen::WorldConfig& world,
                                      std::span<const scenegen::SceneRecord> test,
                                      const std::optional<scenegen::BiasSpec>& bias, const EvalConfig& eval);

// Data, stage-1 model and the frozen counterfactual captions of the
// training split.
struct Stage1Artifacts {
  scenegen::Dataset data;
  captioner::Checkpoint checkpoint;
  std::vector<StepTrace> steps;
  std::vector<EpochTrace> epochs;
  std::vector<scenegen::SceneRecord> cf_train;
  std::string key;  // hash of everything stage 1 depends on
};

std::string stage1_key(const ExperimentConfig& config);
scenegen::Dataset experiment_dataset(const ExperimentConfig& config);
Stage1Artifacts run_stage1(const ExperimentConfig& config,
                           const std::optional<scenegen::Dataset>& data = std::nullopt);
TrainResult run_stage2(const Stage1Artifacts& stage1, const TrainConfig& config);

struct PipelineOptions {
  // Stage-1 artifacts are reused from here when present and stored otherwise.
  std::optional<std::filesystem::path> cache_dir;
  // Use this dataset instead of generating one from the world config.
  std::optional<scenegen::Dataset> data;
};

struct ExperimentRecord {
  nlohmann::ordered_json summary;
  metrics::MetricsReport metrics;
  captioner::Checkpoint final_checkpoint;
};

// Layout of `out_dir`:
//   config.json
//   stage1/{checkpoint.json, trace.jsonl, epochs.jsonl, cf_train.jsonl}
//   stage2/{checkpoint.json, trace.jsonl, epochs.jsonl}   (stages = 2)
//   metrics.json, metrics.txt, summary.json
ExperimentRecord run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                              const PipelineOptions& options = {});

std::string checkpoint_hash(const captioner::Checkpoint& ckpt);

}  // namespace cfcap::trainer
