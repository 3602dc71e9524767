// SPDX-License-Identifier: Apache-2.0
#include "cfcap/causal/effects.hpp"

#include <algorithm>
#include <cmath>

namespace cfcap::causal {

namespace {

double average_prob(const captioner::CaptionModel& model, const SceneImage& image,
                    const TokenSeq& tokens, TokenId target) {
  const auto rows = model.log_prob_rows(image, std::span(tokens).first(tokens.size() - 1));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) sum += std::exp(rows(i, target));
  return sum / static_cast<double>(rows.rows());
}

}  // namespace

EffectEstimate estimate_effects(const captioner::CaptionModel& model,
                                const CounterfactualSample& sample, TokenId target_token,
                                PositionPolicy policy) {
  if (target_token < 0 || target_token >= model.vocab_size()) {
    throw InputError("estimate_effects: invalid target token");
  }
  if (sample.target_span < 0 ||
      sample.target_span >= static_cast<int>(sample.factual_caption.spans.size())) {
    throw InputError("estimate_effects: target span index out of range");
  }
  if (sample.target().length <= 0) throw InputError("estimate_effects: zero-length target span");
  if (sample.cf_caption.empty()) throw InputError("estimate_effects: empty cf_caption");
  const TokenSeq& caption = sample.factual_caption.tokens;

  double factual = 0.0;
  if (policy == PositionPolicy::kFactualPosition) {
    const auto phrase = sample.target_tokens();
    const auto it = std::find(phrase.begin(), phrase.end(), target_token);
    if (it == phrase.end()) {
      throw InputError("estimate_effects: target token is not part of the target entity");
    }
    const int pos = sample.target().start + static_cast<int>(it - phrase.begin());
    factual = model.next(sample.factual_image, std::span(caption).first(pos)).prob(target_token);
  } else {
    factual = average_prob(model, sample.factual_image, caption, target_token);
  }
  const double mediated = average_prob(model, sample.factual_image, sample.cf_caption, target_token);
  const double counterfactual = average_prob(model, sample.cf_image, sample.cf_caption, target_token);

  EffectEstimate e;
  e.target_token = target_token;
  e.te = factual - counterfactual;
  e.nde = mediated - counterfactual;
  e.tie = e.te - e.nde;
  return e;
}

}  // namespace cfcap::causal
