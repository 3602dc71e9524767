// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cfcap/captioner/model.hpp"
#include "cfcap/scene.hpp"

namespace cfcap::causal {

// Causal roles: the image is the treatment X, the preceding tokens are the
// mediator M, and the probability of the target token is the outcome Y.
// All three effects are differences of probabilities.
struct EffectEstimate {
  double te = 0.0;   // Y(I, M_I) - Y(I*, M_I*)
  double nde = 0.0;  // Y(I, M_I*) - Y(I*, M_I*)
  double tie = 0.0;  // te - nde
  TokenId target_token = 0;
};

// How Y(I, M_I) is read off the factual caption.
enum class PositionPolicy {
  kFactualPosition,  // at the token's position inside the target span
  kPrefixAverage,    // averaged over every prefix of the factual caption
};

// Outcomes under the counterfactual mediator average the token probability
// over every prefix of the counterfactual caption.
EffectEstimate estimate_effects(const captioner::CaptionModel& model,
                                const CounterfactualSample& sample, TokenId target_token,
                                PositionPolicy policy = PositionPolicy::kFactualPosition);

}  // namespace cfcap::causal
