// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <vector>

#include "cfcap/captioner/checkpoint.hpp"
#include "cfcap/causal/losses.hpp"
#include "cfcap/trainer/optimizer.hpp"

namespace cfcap::trainer {

struct TrainConfig {
  int stage = 1;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  double alpha = 1.0;
  causal::Variant variant = causal::Variant::kNDE;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double log_prob_floor = causal::kDefaultLogProbFloor;
  int max_steps = 0;  // 0 = no limit

  static TrainConfig stage1_defaults();
  // Two epochs at learning rate 1e-4, alpha 0.99.
  static TrainConfig stage2_defaults();

  // Learning rate 0 is accepted as a null update for tests; negative or
  // non-finite values are rejected.
  void validate() const;
  causal::RegularizationConfig regularization() const;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct StepTrace {
  int step = 0;  // 1-based
  int epoch = 0;
  double nll = 0.0;  // batch means
  double reg = 0.0;
  double aggregate = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

struct EpochTrace {
  int epoch = 0;
  double nll = 0.0;  // mean over the epoch's steps
  double reg = 0.0;
  double aggregate = 0.0;
};

struct TrainResult {
  captioner::Checkpoint checkpoint;
  std::vector<StepTrace> steps;
  std::vector<EpochTrace> epochs;
};

// Called after every optimizer step with the updated parameters.
using StepHook = std::function<void(const StepTrace&, const captioner::ModelParams&)>;

std::vector<causal::CaptionView> factual_views(std::span<const CounterfactualSample> samples);

// Stage 1: plain NLL from freshly initialized parameters (seeded by
// config.seed). Throws DivergenceError on a non-finite loss.
TrainResult train_stage1(std::span<const causal::CaptionView> data, const captioner::ModelConfig& model,
                         const TrainConfig& config, const StepHook& hook = {});

// More NLL training from existing parameters, with the same batching as
// stage 2 over the factual halves of the same samples.
TrainResult continue_nll_training(const captioner::ModelParams& start,
                                  std::span<const causal::CaptionView> data, const TrainConfig& config,
                                  const StepHook& hook = {});

// Stage 2: alpha * NLL (factual half of each sample) + (1 - alpha) * TE or
// NDE regularizer, both batch means. Requires a stage-1 checkpoint.
TrainResult train_stage2(const captioner::Checkpoint& stage1, std::span<const CounterfactualSample> data,
                         const TrainConfig& config, const StepHook& hook = {});

nlohmann::ordered_json step_trace_to_json(const StepTrace& t);
nlohmann::ordered_json epoch_trace_to_json(const EpochTrace& t);
void write_step_trace(const std::filesystem::path& path, std::span<const StepTrace> steps);
void write_epoch_trace(const std::filesystem::path& path, std::span<const EpochTrace> epochs);

}  // namespace cfcap::trainer
