// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cfcap/captioner/model.hpp"
#include "cfcap/scene.hpp"

namespace cfcap::causal {

using captioner::Matrix;
using captioner::ModelParams;

enum class Variant { kTE, kNDE };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

// log(1e-8)
inline const double kDefaultLogProbFloor = std::log(1e-8);

struct RegularizationConfig {
  double alpha = 0.99;
  Variant variant = Variant::kNDE;
  double log_prob_floor = kDefaultLogProbFloor;

  void validate() const;
};

// A factual (image, caption) pair viewed without copying.
struct CaptionView {
  const SceneImage* image;
  std::span<const TokenId> tokens;
};

// Losses that are weighted sums of model log-probabilities,
//   loss = sum_runs sum_terms weight * log f(token | image, prefix[0, row)),
// where each run is one teacher-forced pass. Terms marked `floored` use
// max(log p, floor) and contribute no gradient below the floor. Terms that
// share (image, tokens) are evaluated in a single pass.
class LogProbObjective {
 public:
  // Registers a pass over BOS + tokens[0, rows-1); returns its index.
  int run(const SceneImage& image, std::span<const TokenId> tokens, int rows);
  void add(int run, int row, TokenId token, double weight, bool floored = false);

  // Evaluates the objective; when `grad` is non-null accumulates its
  // gradient there.
  double evaluate(const ModelParams& params, double log_prob_floor,
                  ModelParams* grad = nullptr) const;

 private:
  struct Term {
    int row;
    TokenId token;
    double weight;
    bool floored;
  };
  struct Run {
    const SceneImage* image;
    TokenSeq prefix;
    int rows;
    std::vector<Term> terms;
  };
  std::vector<Run> runs_;
};

// Adds -scale * sum_i log f(s_i | I, S_<i) for one caption.
void add_nll_terms(LogProbObjective& obj, const CaptionView& sample, double scale);
// Adds scale * L_TE for one counterfactual sample.
void add_te_terms(LogProbObjective& obj, const CounterfactualSample& sample, double scale);
// Adds scale * L_NDE for one counterfactual sample.
void add_nde_terms(LogProbObjective& obj, const CounterfactualSample& sample, double scale);

double nll_loss(const ModelParams& params, std::span<const CaptionView> batch,
                ModelParams* grad = nullptr);

double te_loss(const ModelParams& params, const CounterfactualSample& sample,
               double log_prob_floor = kDefaultLogProbFloor, ModelParams* grad = nullptr);

double nde_loss(const ModelParams& params, const CounterfactualSample& sample,
                double log_prob_floor = kDefaultLogProbFloor, ModelParams* grad = nullptr);

// Plain sum over samples of te_loss / nde_loss.
double regularization_loss(const ModelParams& params,
                           std::span<const CounterfactualSample> batch,
                           const RegularizationConfig& config, ModelParams* grad = nullptr);

// alpha * nll + (1 - alpha) * reg; exactly nll at alpha = 1 and exactly reg
// at alpha = 0.
double aggregate_loss(double nll, double reg, const RegularizationConfig& config);

}  // namespace cfcap::causal
