// SPDX-License-Identifier: Apache-2.0
#include "cfcap/causal/losses.hpp"

#include <algorithm>

namespace cfcap::causal {

Variant variant_from_string(const std::string& name) {
  if (name == "TE" || name == "te") return Variant::kTE;
  if (name == "NDE" || name == "nde") return Variant::kNDE;
  throw ConfigError("unknown regularization variant '" + name + "' (expected TE or NDE)");
}

std::string to_string(Variant v) { return v == Variant::kTE ? "TE" : "NDE"; }

void RegularizationConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(log_prob_floor < 0.0)) throw ConfigError("log_prob_floor must be negative");
}

int LogProbObjective::run(const SceneImage& image, std::span<const TokenId> tokens, int rows) {
  if (rows < 1 || rows > static_cast<int>(tokens.size())) {
    throw InputError("LogProbObjective: invalid row count");
  }
  TokenSeq prefix(tokens.begin(), tokens.begin() + (rows - 1));
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    if (runs_[i].image == &image && runs_[i].prefix == prefix) return static_cast<int>(i);
  }
  runs_.push_back(Run{&image, std::move(prefix), rows, {}});
  return static_cast<int>(runs_.size()) - 1;
}

void LogProbObjective::add(int run, int row, TokenId token, double weight, bool floored) {
  Run& r = runs_.at(run);
  if (row < 0 || row >= r.rows) throw InputError("LogProbObjective: row out of range");
  r.terms.push_back(Term{row, token, weight, floored});
}

double LogProbObjective::evaluate(const ModelParams& params, double log_prob_floor,
                                  ModelParams* grad) const {
  const int vocab = params.config().vocab_size;
  double total = 0.0;
  for (const Run& r : runs_) {
    for (const Term& t : r.terms) {
      if (t.token < 0 || t.token >= vocab) {
        throw InputError("invalid token id " + std::to_string(t.token));
      }
    }
    const captioner::ForwardCache cache = captioner::run_forward(params, *r.image, r.prefix);
    Matrix dlogits;
    if (grad != nullptr) dlogits = Matrix::Zero(cache.log_probs.rows(), vocab);
    double run_total = 0.0;
    for (const Term& t : r.terms) {
      double lp = cache.log_probs(t.row, t.token);
      bool active = true;
      if (t.floored && lp < log_prob_floor) {
        lp = log_prob_floor;
        active = false;
      }
      run_total += t.weight * lp;
      if (grad != nullptr && active) {
        dlogits.row(t.row) -= t.weight * cache.log_probs.row(t.row).array().exp().matrix();
        dlogits(t.row, t.token) += t.weight;
      }
    }
    if (grad != nullptr) captioner::run_backward(params, *r.image, cache, dlogits, *grad);
    total += run_total;
  }
  return total;
}

namespace {

void check_cf_sample(const CounterfactualSample& s) {
  if (s.target_span < 0 || s.target_span >= static_cast<int>(s.factual_caption.spans.size())) {
    throw InputError("counterfactual sample: target span index out of range");
  }
  const EntitySpan& span = s.target();
  if (span.length <= 0) throw InputError("counterfactual sample: zero-length target span");
  if (span.start < 0 ||
      span.start + span.length > static_cast<int>(s.factual_caption.tokens.size())) {
    throw InputError("counterfactual sample: target span outside the caption");
  }
  if (s.cf_caption.empty()) throw InputError("counterfactual sample: empty cf_caption");
}

// scale * (1/L*) * sum_i sum_j log f(s~_j | image, S*_<i)
void add_cf_average(LogProbObjective& obj, const SceneImage& image,
                    const CounterfactualSample& s, double scale, bool floored) {
  const int len = static_cast<int>(s.cf_caption.size());
  const int run = obj.run(image, s.cf_caption, len);
  const double w = scale / len;
  for (TokenId tok : s.target_tokens()) {
    for (int i = 0; i < len; ++i) obj.add(run, i, tok, w, floored);
  }
}

}  // namespace

void add_nll_terms(LogProbObjective& obj, const CaptionView& sample, double scale) {
  if (sample.tokens.empty()) throw InputError("nll_loss: empty caption");
  const int len = static_cast<int>(sample.tokens.size());
  const int run = obj.run(*sample.image, sample.tokens, len);
  for (int i = 0; i < len; ++i) obj.add(run, i, sample.tokens[i], -scale);
}

void add_te_terms(LogProbObjective& obj, const CounterfactualSample& s, double scale) {
  check_cf_sample(s);
  const EntitySpan& span = s.target();
  const auto& caption = s.factual_caption.tokens;
  // Factual term: each entity token at its own position in S.
  const int run = obj.run(s.factual_image, caption, static_cast<int>(caption.size()));
  for (int j = 0; j < span.length; ++j) {
    obj.add(run, span.start + j, caption[span.start + j], -scale);
  }
  add_cf_average(obj, s.cf_image, s, scale, /*floored=*/true);
}

void add_nde_terms(LogProbObjective& obj, const CounterfactualSample& s, double scale) {
  check_cf_sample(s);
  // Both terms are floored so that identical images cancel exactly.
  add_cf_average(obj, s.factual_image, s, -scale, /*floored=*/true);
  add_cf_average(obj, s.cf_image, s, scale, /*floored=*/true);
}

double nll_loss(const ModelParams& params, std::span<const CaptionView> batch, ModelParams* grad) {
  if (batch.empty()) throw InputError("nll_loss: empty batch");
  LogProbObjective obj;
  for (const auto& s : batch) add_nll_terms(obj, s, 1.0);
  return obj.evaluate(params, kDefaultLogProbFloor, grad);
}

double te_loss(const ModelParams& params, const CounterfactualSample& sample,
               double log_prob_floor, ModelParams* grad) {
  LogProbObjective obj;
  add_te_terms(obj, sample, 1.0);
  return obj.evaluate(params, log_prob_floor, grad);
}

double nde_loss(const ModelParams& params, const CounterfactualSample& sample,
                double log_prob_floor, ModelParams* grad) {
  LogProbObjective obj;
  add_nde_terms(obj, sample, 1.0);
  return obj.evaluate(params, log_prob_floor, grad);
}

double regularization_loss(const ModelParams& params, std::span<const CounterfactualSample> batch,
                           const RegularizationConfig& config, ModelParams* grad) {
  config.validate();
  double total = 0.0;
  for (const auto& s : batch) {
    total += config.variant == Variant::kTE ? te_loss(params, s, config.log_prob_floor, grad)
                                            : nde_loss(params, s, config.log_prob_floor, grad);
  }
  return total;
}

double aggregate_loss(double nll, double reg, const RegularizationConfig& config) {
  config.validate();
  if (config.alpha == 1.0) return nll;
  if (config.alpha == 0.0) return reg;
  return config.alpha * nll + (1.0 - config.alpha) * reg;
}

}  // namespace cfcap::causal
