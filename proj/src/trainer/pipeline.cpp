// SPDX-License-Identifier: Apache-2.0
#include "cfcap/trainer/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "cfcap/explain/explain.hpp"

namespace cfcap::trainer {

namespace fs = std::filesystem;
using captioner::Checkpoint;
using captioner::DecodeConfig;
using nlohmann::json;
using nlohmann::ordered_json;
using scenegen::SceneRecord;

void EvalConfig::validate() const {
  decode.validate();
  if (top_n < 1) throw ConfigError("eval.top_n must be >= 1");
  if (probes_per_sample < 1) throw ConfigError("eval.probes_per_sample must be >= 1");
}

void ExperimentConfig::validate() const {
  world.validate();
  if (bias) bias->validate(world);
  resolved_model();
  if (stages != 1 && stages != 2) throw ConfigError("train.stages must be 1 or 2");
  stage1.validate();
  stage2.validate();
  if (stage1.stage != 1) throw ConfigError("train.stage1.stage must be 1");
  if (stage2.stage != 2) throw ConfigError("train.stage2.stage must be 2");
  cf_decode.validate();
  eval.validate();
}

captioner::ModelConfig ExperimentConfig::resolved_model() const {
  try {
    return scenegen::model_config_for(world, model);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

std::string ExperimentConfig::method() const {
  if (stages == 1) return "stage1";
  if (stage2.alpha == 1.0) return "baseline";
  return causal::to_string(stage2.variant);
}

namespace {

template <typename T>
void read_field(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": wrong type");
  }
}

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(section + "." + key + ": unknown field");
    }
  }
}

// Re-raises validation failures with the section name in front.
template <typename F>
auto in_section(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(section, 0) == 0) throw;
    throw ConfigError(section + ": " + msg);
  } catch (const InputError& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

ordered_json decode_config_to_json(const DecodeConfig& c) {
  return ordered_json{{"strategy", captioner::to_string(c.strategy)},
                      {"beam_width", c.beam_width},
                      {"top_k", c.top_k},
                      {"top_p", c.top_p},
                      {"max_length", c.max_length},
                      {"seed", c.seed}};
}

DecodeConfig decode_config_from_json(const json& j, const std::string& section) {
  reject_unknown(j, section, {"strategy", "beam_width", "top_k", "top_p", "max_length", "seed"});
  DecodeConfig c;
  std::string strategy = captioner::to_string(c.strategy);
  read_field(j, section, "strategy", strategy);
  c.strategy = in_section(section + ".strategy", [&] { return captioner::strategy_from_string(strategy); });
  read_field(j, section, "beam_width", c.beam_width);
  read_field(j, section, "top_k", c.top_k);
  read_field(j, section, "top_p", c.top_p);
  read_field(j, section, "max_length", c.max_length);
  read_field(j, section, "seed", c.seed);
  in_section(section, [&] {
    c.validate();
    return 0;
  });
  return c;
}

ordered_json eval_config_to_json(const EvalConfig& c) {
  return ordered_json{{"decode", decode_config_to_json(c.decode)},
                      {"top_n", c.top_n},
                      {"interpretability", c.interpretability},
                      {"probes_per_sample", c.probes_per_sample},
                      {"probe_seed", c.probe_seed}};
}

EvalConfig eval_config_from_json(const json& j) {
  reject_unknown(j, "eval", {"decode", "top_n", "interpretability", "probes_per_sample", "probe_seed"});
  EvalConfig c;
  if (j.contains("decode")) c.decode = decode_config_from_json(j.at("decode"), "eval.decode");
  read_field(j, "eval", "top_n", c.top_n);
  read_field(j, "eval", "interpretability", c.interpretability);
  read_field(j, "eval", "probes_per_sample", c.probes_per_sample);
  read_field(j, "eval", "probe_seed", c.probe_seed);
  in_section("eval", [&] {
    c.validate();
    return 0;
  });
  return c;
}

ordered_json experiment_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["world"] = scenegen::world_to_json(c.world);
  if (c.bias) j["bias"] = scenegen::bias_to_json(*c.bias);
  j["model"] = ordered_json{{"embed_dim", c.model.embed_dim},
                            {"num_heads", c.model.num_heads},
                            {"attention_dim", c.model.attention_dim},
                            {"hidden_dim", c.model.hidden_dim}};
  j["train"] = ordered_json{{"stages", c.stages},
                            {"stage1", train_config_to_json(c.stage1)},
                            {"stage2", train_config_to_json(c.stage2)},
                            {"cf_decode", decode_config_to_json(c.cf_decode)}};
  j["eval"] = eval_config_to_json(c.eval);
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j, "config", {"world", "bias", "model", "train", "eval"});
  ExperimentConfig c;
  if (j.contains("world")) c.world = in_section("world", [&] { return scenegen::world_from_json(j.at("world")); });
  if (j.contains("bias") && !j.at("bias").is_null()) {
    c.bias = in_section("bias", [&] { return scenegen::bias_from_json(j.at("bias")); });
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model", {"embed_dim", "num_heads", "attention_dim", "hidden_dim"});
    read_field(m, "model", "embed_dim", c.model.embed_dim);
    read_field(m, "model", "num_heads", c.model.num_heads);
    read_field(m, "model", "attention_dim", c.model.attention_dim);
    read_field(m, "model", "hidden_dim", c.model.hidden_dim);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train", {"stages", "stage1", "stage2", "cf_decode"});
    read_field(t, "train", "stages", c.stages);
    if (t.contains("stage1")) {
      c.stage1 = in_section("train.stage1", [&] { return train_config_from_json(t.at("stage1"), c.stage1); });
    }
    if (t.contains("stage2")) {
      c.stage2 = in_section("train.stage2", [&] { return train_config_from_json(t.at("stage2"), c.stage2); });
    }
    if (t.contains("cf_decode")) c.cf_decode = decode_config_from_json(t.at("cf_decode"), "train.cf_decode");
  }
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  if (c.bias) in_section("bias", [&] {
      c.bias->validate(c.world);
      return 0;
    });
  c.validate();
  return c;
}

metrics::MetricsReport evaluate_model(const captioner::CaptionModel& model, const scenegen::WorldConfig& world,
                                      std::span<const SceneRecord> test,
                                      const std::optional<scenegen::BiasSpec>& bias, const EvalConfig& eval) {
  eval.validate();
  if (test.empty()) throw InputError("evaluate: empty test split");
  const TokenId eos = model.eos();
  const bool reuse_beam = eval.decode.strategy == captioner::Strategy::kBeam &&
                          eval.decode.beam_width == std::max(eval.top_n, eval.decode.beam_width);

  std::vector<metrics::MaskedCaption> masked;
  std::vector<TokenSeq> cf_predictions, factual_predictions, hypotheses, references;
  std::vector<std::vector<TokenSeq>> reference_sets;
  double p_sum = 0.0, ndcg_sum = 0.0, rouge_sum = 0.0;
  int short_lists = 0;
  for (const auto& r : test) {
    const auto& s = r.sample;
    const auto cands = captioner::top_n_captions(model, s.cf_image, eval.top_n, eval.decode.beam_width,
                                                 eval.decode.max_length);
    TokenSeq cf_caption =
        reuse_beam && !cands.captions.empty() ? cands.captions.front().tokens : captioner::decode(model, s.cf_image, eval.decode);
    const TokenSeq phrase(s.target_tokens().begin(), s.target_tokens().end());
    masked.push_back({metrics::strip_eos(cf_caption, eos), phrase});
    cf_predictions.push_back(masked.back().caption);

    std::vector<TokenSeq> cand_tokens;
    for (const auto& h : cands.captions) cand_tokens.push_back(h.tokens);
    const auto judgment = metrics::RankingJudgment::from_candidates(cand_tokens, phrase);
    bool padded = false;
    p_sum += metrics::precision_at_k(judgment, eval.top_n, &padded);
    ndcg_sum += metrics::ndcg_at_k(judgment, eval.top_n);
    if (padded || cands.short_list) ++short_lists;

    TokenSeq hyp = metrics::strip_eos(captioner::decode(model, s.factual_image, eval.decode), eos);
    TokenSeq ref = metrics::strip_eos(s.factual_caption.tokens, eos);
    rouge_sum += metrics::rouge_l(hyp, ref);
    factual_predictions.push_back(hyp);
    hypotheses.push_back(hyp);
    references.push_back(ref);
    reference_sets.push_back({ref});
  }
  const double n = static_cast<double>(test.size());
  metrics::MetricsReport report;
  report.chair_s = metrics::chair_s(masked);
  report.p_at_5 = p_sum / n;
  report.ndcg_at_5 = ndcg_sum / n;
  report.bleu4 = metrics::corpus_bleu4(hypotheses, reference_sets);
  report.rouge_l = rouge_sum / n;
  report.num_images = static_cast<int>(test.size());
  report.short_candidate_lists = short_lists;

  if (bias) {
    const scenegen::Vocabulary vocab(world);
    const std::vector<TokenSeq> a{vocab.phrase(world.object_index(bias->class_a))};
    const std::vector<TokenSeq> b{vocab.phrase(world.object_index(bias->class_b))};
    report.biased_error = metrics::biased_error_rate(cf_predictions, references, a, b);
    report.biased_error_factual = metrics::biased_error_rate(factual_predictions, references, a, b);
  }
  if (eval.interpretability) {
    const auto samples = scenegen::samples_of(std::vector<SceneRecord>(test.begin(), test.end()));
    report.interpretability_accuracy =
        explain::interpretability_accuracy(model, samples, eval.probes_per_sample, eval.probe_seed);
  }
  return report;
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
  return hex64(fnv1a64(captioner::checkpoint_to_json(ckpt).dump()));
}

std::string stage1_key(const ExperimentConfig& c) {
  ordered_json j;
  j["world"] = scenegen::world_to_json(c.world);
  if (c.bias) j["bias"] = scenegen::bias_to_json(*c.bias);
  j["model"] = captioner::config_to_json(c.resolved_model());
  j["stage1"] = train_config_to_json(c.stage1);
  j["cf_decode"] = decode_config_to_json(c.cf_decode);
  return hex64(fnv1a64(j.dump()));
}

scenegen::Dataset experiment_dataset(const ExperimentConfig& c) {
  return c.bias ? scenegen::build_biased_split(c.world, *c.bias) : scenegen::build_dataset(c.world);
}

Stage1Artifacts run_stage1(const ExperimentConfig& c, const std::optional<scenegen::Dataset>& data) {
  c.validate();
  Stage1Artifacts a;
  a.key = stage1_key(c);
  a.data = data ? *data : experiment_dataset(c);
  const auto train = scenegen::samples_of(a.data.train);
  const auto views = factual_views(train);
  TrainResult r = train_stage1(views, c.resolved_model(), c.stage1);
  a.checkpoint = std::move(r.checkpoint);
  a.steps = std::move(r.steps);
  a.epochs = std::move(r.epochs);
  a.cf_train = a.data.train;
  scenegen::attach_cf_captions(captioner::NeuralCaptioner(a.checkpoint.params), a.cf_train, c.cf_decode);
  return a;
}

TrainResult run_stage2(const Stage1Artifacts& stage1, const TrainConfig& config) {
  const auto samples = scenegen::samples_of(stage1.cf_train);
  return train_stage2(stage1.checkpoint, samples, config);
}

namespace {

StepTrace step_from_json(const json& j) {
  StepTrace t;
  t.step = j.at("step").get<int>();
  t.epoch = j.at("epoch").get<int>();
  t.nll = j.at("nll").get<double>();
  t.reg = j.at("reg").get<double>();
  t.aggregate = j.at("aggregate").get<double>();
  t.grad_norm = j.at("grad_norm").get<double>();
  t.clipped_norm = j.at("clipped_norm").get<double>();
  return t;
}

EpochTrace epoch_from_json(const json& j) {
  return EpochTrace{j.at("epoch").get<int>(), j.at("nll").get<double>(), j.at("reg").get<double>(),
                    j.at("aggregate").get<double>()};
}

template <typename T, typename F>
std::vector<T> read_jsonl(const fs::path& path, F parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse(json::parse(line)));
  }
  return out;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_stage1_files(const fs::path& dir, const Stage1Artifacts& a) {
  fs::create_directories(dir);
  captioner::save_checkpoint(dir / "checkpoint.json", a.checkpoint);
  write_step_trace(dir / "trace.jsonl", a.steps);
  write_epoch_trace(dir / "epochs.jsonl", a.epochs);
  scenegen::write_split(dir / "cf_train.jsonl", a.cf_train);
}

Stage1Artifacts load_stage1(const fs::path& dir, const ExperimentConfig& c,
                            const std::optional<scenegen::Dataset>& data) {
  Stage1Artifacts a;
  a.key = stage1_key(c);
  a.data = data ? *data : experiment_dataset(c);
  a.checkpoint = captioner::load_checkpoint(dir / "checkpoint.json");
  a.steps = read_jsonl<StepTrace>(dir / "trace.jsonl", step_from_json);
  a.epochs = read_jsonl<EpochTrace>(dir / "epochs.jsonl", epoch_from_json);
  a.cf_train = scenegen::read_split(dir / "cf_train.jsonl", c.world.grid_height, c.world.grid_width);
  return a;
}

}  // namespace

ExperimentRecord run_pipeline(const ExperimentConfig& c, const fs::path& out_dir, const PipelineOptions& options) {
  c.validate();
  fs::create_directories(out_dir);
  write_json_file(out_dir / "config.json", experiment_to_json(c));

  Stage1Artifacts s1;
  const std::string key = stage1_key(c);
  std::optional<fs::path> cached;
  if (options.cache_dir) cached = *options.cache_dir / ("stage1-" + key);
  if (cached && fs::exists(*cached / "checkpoint.json")) {
    s1 = load_stage1(*cached, c, options.data);
  } else {
    s1 = run_stage1(c, options.data);
    if (cached) write_stage1_files(*cached, s1);
  }
  write_stage1_files(out_dir / "stage1", s1);

  ExperimentRecord rec;
  ordered_json summary;
  summary["format"] = "cfcap-summary";
  summary["version"] = 1;
  summary["method"] = c.method();
  summary["stage"] = c.stages;
  summary["config_hash"] = hex64(fnv1a64(experiment_to_json(c).dump()));
  summary["world_hash"] = scenegen::config_hash(c.world);
  summary["stage1"] = ordered_json{{"key", key},
                                   {"checkpoint_hash", checkpoint_hash(s1.checkpoint)},
                                   {"steps", s1.steps.size()},
                                   {"final_epoch", epoch_trace_to_json(s1.epochs.back())}};
  if (c.stages == 2) {
    TrainResult r2 = run_stage2(s1, c.stage2);
    const fs::path dir = out_dir / "stage2";
    fs::create_directories(dir);
    captioner::save_checkpoint(dir / "checkpoint.json", r2.checkpoint);
    write_step_trace(dir / "trace.jsonl", r2.steps);
    write_epoch_trace(dir / "epochs.jsonl", r2.epochs);
    summary["stage2"] = ordered_json{{"variant", causal::to_string(c.stage2.variant)},
                                     {"alpha", c.stage2.alpha},
                                     {"checkpoint_hash", checkpoint_hash(r2.checkpoint)},
                                     {"steps", r2.steps.size()},
                                     {"final_step", step_trace_to_json(r2.steps.back())}};
    rec.final_checkpoint = std::move(r2.checkpoint);
  } else {
    rec.final_checkpoint = s1.checkpoint;
  }

  rec.metrics = evaluate_model(captioner::NeuralCaptioner(rec.final_checkpoint.params), c.world, s1.data.test,
                               c.bias, c.eval);
  const ordered_json metrics_json = rec.metrics.to_json();
  write_json_file(out_dir / "metrics.json", metrics_json);
  const std::vector<metrics::ReportRow> rows{{c.method(), metrics_json}};
  std::ofstream(out_dir / "metrics.txt", std::ios::binary | std::ios::trunc) << metrics::render_table(rows);
  summary["metrics"] = metrics_json;
  write_json_file(out_dir / "summary.json", summary);
  rec.summary = std::move(summary);
  return rec;
}

}  // namespace cfcap::trainer
