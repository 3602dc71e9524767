// SPDX-License-Identifier: Apache-2.0
#include "cfcap/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace cfcap::trainer {

using captioner::Checkpoint;
using captioner::ModelParams;
using nlohmann::ordered_json;

TrainConfig TrainConfig::stage1_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::stage2_defaults() {
  TrainConfig c;
  c.stage = 2;
  c.learning_rate = 1e-4;
  c.epochs = 2;
  c.alpha = 0.99;
  return c;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train.stage must be 1 or 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be finite and non-negative");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha must lie in [0, 1]");
  if (!std::isfinite(clip_norm)) throw ConfigError("train.clip_norm must be finite");
  if (!(log_prob_floor < 0.0)) throw ConfigError("train.log_prob_floor must be negative");
  if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
}

causal::RegularizationConfig TrainConfig::regularization() const {
  return causal::RegularizationConfig{alpha, variant, log_prob_floor};
}

ordered_json train_config_to_json(const TrainConfig& c) {
  return ordered_json{{"stage", c.stage},
                      {"learning_rate", c.learning_rate},
                      {"batch_size", c.batch_size},
                      {"epochs", c.epochs},
                      {"alpha", c.alpha},
                      {"variant", causal::to_string(c.variant)},
                      {"seed", c.seed},
                      {"clip_norm", c.clip_norm},
                      {"optimizer", to_string(c.optimizer)},
                      {"log_prob_floor", c.log_prob_floor},
                      {"max_steps", c.max_steps}};
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  static const char* kKnown[] = {"stage", "learning_rate", "batch_size", "epochs", "alpha", "variant",
                                 "seed", "clip_norm", "optimizer", "log_prob_floor", "max_steps"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ConfigError("train." + key + ": unknown field");
    }
  }
  read_field(j, "stage", c.stage, "train");
  read_field(j, "learning_rate", c.learning_rate, "train");
  read_field(j, "batch_size", c.batch_size, "train");
  read_field(j, "epochs", c.epochs, "train");
  read_field(j, "alpha", c.alpha, "train");
  read_field(j, "seed", c.seed, "train");
  read_field(j, "clip_norm", c.clip_norm, "train");
  read_field(j, "log_prob_floor", c.log_prob_floor, "train");
  read_field(j, "max_steps", c.max_steps, "train");
  std::string name;
  if (j.contains("variant")) {
    read_field(j, "variant", name, "train");
    try {
      c.variant = causal::variant_from_string(name);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("train.variant: ") + e.what());
    }
  }
  if (j.contains("optimizer")) {
    read_field(j, "optimizer", name, "train");
    try {
      c.optimizer = optimizer_from_string(name);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("train.optimizer: ") + e.what());
    }
  }
  c.validate();
  return c;
}

std::vector<causal::CaptionView> factual_views(std::span<const CounterfactualSample> samples) {
  std::vector<causal::CaptionView> views;
  views.reserve(samples.size());
  for (const auto& s : samples) views.push_back({&s.factual_image, s.factual_caption.tokens});
  return views;
}

namespace {

struct BatchLoss {
  double nll = 0.0;
  double reg = 0.0;
};

// Computes batch-mean losses for the given indices and writes the gradient
// of the aggregate into `grad`.
using BatchFn = std::function<BatchLoss(std::span<const std::size_t>, ModelParams& grad)>;

void run_loop(ModelParams& params, std::size_t n, const TrainConfig& config, const BatchFn& batch_fn,
              TrainResult& result, const StepHook& hook) {
  Optimizer opt(config.optimizer, config.learning_rate);
  Rng order_rng(splitmix64(config.seed ^ 0x6f72646572ULL));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto reg_cfg = config.regularization();
  ModelParams grad(params.config());
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochTrace et;
    et.epoch = epoch;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      grad.set_zero();
      const BatchLoss loss = batch_fn(std::span(order).subspan(start, end - start), grad);
      StepTrace st;
      st.step = ++step;
      st.epoch = epoch;
      st.nll = loss.nll;
      st.reg = loss.reg;
      st.aggregate = causal::aggregate_loss(loss.nll, loss.reg, reg_cfg);
      if (!std::isfinite(st.aggregate)) {
        throw DivergenceError("training diverged at step " + std::to_string(st.step) +
                              " (epoch " + std::to_string(epoch) + "): non-finite loss");
      }
      st.grad_norm = clip_global_norm(grad, config.clip_norm);
      if (!std::isfinite(st.grad_norm)) {
        throw DivergenceError("training diverged at step " + std::to_string(st.step) +
                              ": non-finite gradient");
      }
      st.clipped_norm = std::sqrt(grad.squared_norm());
      opt.step(params, grad);
      result.steps.push_back(st);
      et.nll += st.nll;
      et.reg += st.reg;
      et.aggregate += st.aggregate;
      ++epoch_steps;
      if (hook) hook(st, params);
      if (config.max_steps > 0 && step >= config.max_steps) break;
    }
    et.nll /= epoch_steps;
    et.reg /= epoch_steps;
    et.aggregate /= epoch_steps;
    result.epochs.push_back(et);
    if (config.max_steps > 0 && step >= config.max_steps) break;
  }
}

TrainResult nll_training(ModelParams params, std::span<const causal::CaptionView> data,
                         const TrainConfig& config, const StepHook& hook) {
  if (data.empty()) throw InputError("training: empty dataset");
  TrainResult result{Checkpoint{params, "init", ordered_json::object()}, {}, {}};
  ModelParams& live = result.checkpoint.params;
  const BatchFn fn = [&](std::span<const std::size_t> idx, ModelParams& grad) {
    causal::LogProbObjective obj;
    const double scale = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i : idx) causal::add_nll_terms(obj, data[i], scale);
    return BatchLoss{obj.evaluate(live, config.log_prob_floor, &grad), 0.0};
  };
  run_loop(live, data.size(), config, fn, result, hook);
  return result;
}

}  // namespace

TrainResult train_stage1(std::span<const causal::CaptionView> data, const captioner::ModelConfig& model,
                         const TrainConfig& config, const StepHook& hook) {
  config.validate();
  model.validate();
  TrainConfig c = config;
  c.alpha = 1.0;
  TrainResult r = nll_training(ModelParams::initialize(model, config.seed), data, c, hook);
  r.checkpoint.stage = "stage1";
  r.checkpoint.metadata = ordered_json{{"train", train_config_to_json(config)}};
  return r;
}

TrainResult continue_nll_training(const ModelParams& start, std::span<const causal::CaptionView> data,
                                  const TrainConfig& config, const StepHook& hook) {
  config.validate();
  TrainConfig c = config;
  c.alpha = 1.0;
  TrainResult r = nll_training(start, data, c, hook);
  r.checkpoint.stage = "stage1";
  r.checkpoint.metadata = ordered_json{{"train", train_config_to_json(config)}};
  return r;
}

TrainResult train_stage2(const Checkpoint& stage1, std::span<const CounterfactualSample> data,
                         const TrainConfig& config, const StepHook& hook) {
  config.validate();
  if (stage1.stage != "stage1") {
    throw InputError("train_stage2: expected a stage1 checkpoint, got '" + stage1.stage + "'");
  }
  if (data.empty()) throw InputError("train_stage2: empty counterfactual dataset");
  const TokenId eos = stage1.params.config().eos_token;
  for (const auto& s : data) s.validate(eos);

  const std::vector<causal::CaptionView> views = factual_views(data);
  TrainResult result{Checkpoint{stage1.params, "stage2", ordered_json::object()}, {}, {}};
  ModelParams& live = result.checkpoint.params;
  const double alpha = config.alpha;
  ModelParams reg_grad(live.config());
  const BatchFn fn = [&](std::span<const std::size_t> idx, ModelParams& grad) {
    const double scale = 1.0 / static_cast<double>(idx.size());
    causal::LogProbObjective nll_obj, reg_obj;
    for (std::size_t i : idx) {
      causal::add_nll_terms(nll_obj, views[i], scale);
      if (config.variant == causal::Variant::kTE) {
        causal::add_te_terms(reg_obj, data[i], scale);
      } else {
        causal::add_nde_terms(reg_obj, data[i], scale);
      }
    }
    BatchLoss loss;
    if (alpha == 1.0) {
      // Same arithmetic as plain NLL training; the regularizer is traced only.
      loss.nll = nll_obj.evaluate(live, config.log_prob_floor, &grad);
      loss.reg = reg_obj.evaluate(live, config.log_prob_floor);
      return loss;
    }
    if (alpha == 0.0) {
      loss.nll = nll_obj.evaluate(live, config.log_prob_floor);
      loss.reg = reg_obj.evaluate(live, config.log_prob_floor, &grad);
      return loss;
    }
    loss.nll = nll_obj.evaluate(live, config.log_prob_floor, &grad);
    reg_grad.set_zero();
    loss.reg = reg_obj.evaluate(live, config.log_prob_floor, &reg_grad);
    auto g = grad.flat();
    auto r = reg_grad.flat();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = alpha * g[k] + (1.0 - alpha) * r[k];
    return loss;
  };
  run_loop(live, data.size(), config, fn, result, hook);
  result.checkpoint.metadata = ordered_json{{"variant", causal::to_string(config.variant)},
                                            {"alpha", config.alpha},
                                            {"train", train_config_to_json(config)}};
  return result;
}

ordered_json step_trace_to_json(const StepTrace& t) {
  return ordered_json{{"step", t.step},         {"epoch", t.epoch},         {"nll", t.nll},
                      {"reg", t.reg},           {"aggregate", t.aggregate}, {"grad_norm", t.grad_norm},
                      {"clipped_norm", t.clipped_norm}};
}

ordered_json epoch_trace_to_json(const EpochTrace& t) {
  return ordered_json{{"epoch", t.epoch}, {"nll", t.nll}, {"reg", t.reg}, {"aggregate", t.aggregate}};
}

namespace {

template <typename T, typename F>
void write_jsonl(const std::filesystem::path& path, std::span<const T> rows, F to_json) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

}  // namespace

void write_step_trace(const std::filesystem::path& path, std::span<const StepTrace> steps) {
  write_jsonl(path, steps, step_trace_to_json);
}

void write_epoch_trace(const std::filesystem::path& path, std::span<const EpochTrace> epochs) {
  write_jsonl(path, epochs, epoch_trace_to_json);
}

}  // namespace cfcap::trainer
