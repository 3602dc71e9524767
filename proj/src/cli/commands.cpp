// SPDX-License-Identifier: Apache-2.0
#include "cfcap/cli/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cfcap/cli/config.hpp"
#include "cfcap/cli/plot.hpp"
#include "cfcap/explain/explain.hpp"

namespace cfcap::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

scenegen::DatasetBundle load_data(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw InputError("no dataset manifest in " + dir.string());
  return scenegen::read_dataset(dir);
}

captioner::Checkpoint load_ckpt(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("checkpoint not found: " + path.string());
  return captioner::load_checkpoint(path);
}

// Evaluation split of a dataset bundle: the biased test split when present.
const std::vector<scenegen::SceneRecord>& eval_split(const scenegen::DatasetBundle& b) {
  return b.biased ? b.biased->test : b.data.test;
}

void check_model_fits(const captioner::Checkpoint& ckpt, const scenegen::WorldConfig& world) {
  const auto want = scenegen::model_config_for(world, ckpt.params.config());
  if (!(want == ckpt.params.config())) {
    throw InputError("checkpoint model does not match the dataset's world (vocabulary or grid differ)");
  }
}

int cmd_gen_data(const std::string& config_path, const fs::path& out_dir, std::ostream& out) {
  const auto cfg = load_experiment_config(config_path);
  scenegen::DatasetBundle bundle;
  bundle.config = cfg.world;
  bundle.data = scenegen::build_dataset(cfg.world);
  if (cfg.bias) {
    bundle.bias = cfg.bias;
    bundle.biased = scenegen::build_biased_split(cfg.world, *cfg.bias);
  }
  scenegen::write_dataset(out_dir, bundle);
  out << "wrote dataset to " << out_dir.string() << " (config hash " << scenegen::config_hash(cfg.world)
      << ", train " << bundle.data.train.size() << ", validation " << bundle.data.validation.size() << ", test "
      << bundle.data.test.size() << ")\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const fs::path& data_dir, const fs::path& out_dir,
              const std::string& cache, std::ostream& out) {
  const auto cfg = load_experiment_config(config_path);
  auto bundle = load_data(data_dir);
  if (scenegen::config_hash(bundle.config) != scenegen::config_hash(cfg.world)) {
    throw ConfigError("world: config does not match the dataset manifest in " + data_dir.string());
  }
  if (cfg.bias.has_value() != bundle.biased.has_value()) {
    throw ConfigError("bias: config and dataset disagree on the biased split");
  }
  trainer::PipelineOptions opts;
  opts.data = cfg.bias ? *bundle.biased : bundle.data;
  if (!cache.empty()) opts.cache_dir = fs::path(cache);
  const auto rec = trainer::run_pipeline(cfg, out_dir, opts);
  const std::vector<metrics::ReportRow> rows{{cfg.method(), rec.metrics.to_json()}};
  out << metrics::render_table(rows);
  return kExitOk;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& data_dir, const std::string& config_path,
                 const std::string& out_dir, std::ostream& out) {
  trainer::EvalConfig eval;
  if (!config_path.empty()) eval = load_experiment_config(config_path).eval;
  const auto ckpt = load_ckpt(ckpt_path);
  const auto bundle = load_data(data_dir);
  check_model_fits(ckpt, bundle.config);
  const auto report = trainer::evaluate_model(captioner::NeuralCaptioner(ckpt.params), bundle.config,
                                              eval_split(bundle), bundle.bias, eval);
  const ordered_json j = report.to_json();
  std::string name = ckpt.stage;
  if (ckpt.metadata.contains("variant") && ckpt.metadata.contains("alpha")) {
    name = ckpt.metadata.at("alpha").get<double>() == 1.0 ? "baseline" : ckpt.metadata.at("variant").get<std::string>();
  }
  const std::vector<metrics::ReportRow> rows{{name, j}};
  const std::string table = metrics::render_table(rows);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "metrics.json", j.dump(2) + "\n");
    write_text(fs::path(out_dir) / "metrics.txt", table);
  }
  out << j.dump(2) << '\n' << table;
  return kExitOk;
}

int cmd_interpret(const fs::path& ckpt_path, const fs::path& data_dir, int probes, std::uint64_t seed,
                  const std::string& out_path, std::ostream& out) {
  const auto ckpt = load_ckpt(ckpt_path);
  const auto bundle = load_data(data_dir);
  check_model_fits(ckpt, bundle.config);
  const auto samples = scenegen::samples_of(eval_split(bundle));
  const auto report = explain::run_probes(captioner::NeuralCaptioner(ckpt.params), samples, probes, seed);
  const ordered_json j = report.to_json();
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
  char buf[96];
  std::snprintf(buf, sizeof buf, "interpretability accuracy %.4f over %zu probes\n", report.accuracy,
                report.probes.size());
  out << buf;
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string alpha_label(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", alpha);
  return buf;
}

int cmd_sweep(const std::string& config_path, const fs::path& out_dir, const std::string& alphas_arg,
              const std::string& variants_arg, const std::string& cache, std::ostream& out) {
  const auto base = load_experiment_config(config_path);
  std::vector<double> alphas;
  for (const auto& a : split_list(alphas_arg)) {
    try {
      std::size_t used = 0;
      const double v = std::stod(a, &used);
      if (used != a.size() || !(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(a);
      alphas.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("--alphas: '" + a + "' is not a number in [0, 1]");
    }
  }
  if (alphas.empty()) throw ConfigError("--alphas: empty list");
  std::vector<causal::Variant> variants;
  for (const auto& v : split_list(variants_arg)) {
    try {
      variants.push_back(causal::variant_from_string(v));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--variants: ") + e.what());
    }
  }
  if (variants.empty()) throw ConfigError("--variants: empty list");

  fs::create_directories(out_dir);
  trainer::PipelineOptions opts;
  opts.cache_dir = cache.empty() ? out_dir / "cache" : fs::path(cache);
  std::vector<SweepRow> rows;
  ordered_json records = ordered_json::array();
  for (const auto variant : variants) {
    for (const double alpha : alphas) {
      trainer::ExperimentConfig cfg = base;
      cfg.stages = 2;
      cfg.stage2.variant = variant;
      cfg.stage2.alpha = alpha;
      const fs::path run_dir = out_dir / causal::to_string(variant) / ("alpha-" + alpha_label(alpha));
      const auto rec = trainer::run_pipeline(cfg, run_dir, opts);
      rows.push_back({causal::to_string(variant), alpha, rec.metrics.chair_s, rec.metrics.bleu4});
      records.push_back(ordered_json{{"variant", causal::to_string(variant)},
                                     {"alpha", alpha},
                                     {"chair_s", rec.metrics.chair_s},
                                     {"bleu4", rec.metrics.bleu4},
                                     {"metrics", rec.metrics.to_json()},
                                     {"run_dir", run_dir.lexically_relative(out_dir).generic_string()}});
      out << causal::to_string(variant) << " alpha=" << alpha_label(alpha) << " chair_s=" << rec.metrics.chair_s
          << " bleu4=" << rec.metrics.bleu4 << '\n';
    }
  }
  write_text(out_dir / "sweep.json", ordered_json{{"rows", records}}.dump(2) + "\n");
  std::ostringstream csv;
  csv << "variant,alpha,chair_s,bleu4\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.17g,%.17g\n", r.variant.c_str(), r.alpha, r.chair_s, r.bleu4);
    csv << buf;
  }
  write_text(out_dir / "sweep.csv", csv.str());
  write_sweep_svg(out_dir / "sweep.svg", rows);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactually regularized captioning on synthetic scene grids", "cfcap"};
  app.require_subcommand(1);

  std::string config, out_dir, data_dir, checkpoint, cache, out_file;
  std::string alphas = "0.9,0.99,0.999,0.9999,1.0";
  std::string variants = "TE,NDE";
  int probes = 1;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a dataset and its manifest");
  gen->add_option("--config", config, "JSON config file")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Run the two-stage pipeline and evaluate");
  train->add_option("--config", config, "JSON config file")->required();
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Experiment directory")->required();
  train->add_option("--cache", cache, "Stage-1 cache directory");

  auto* eval = app.add_subcommand("evaluate", "Emit the metrics report for a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--config", config, "Config file (eval section)");
  eval->add_option("--out", out_dir, "Directory for metrics.json and metrics.txt");

  auto* interp = app.add_subcommand("interpret", "Region-contribution ranking accuracy");
  interp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  interp->add_option("--data", data_dir, "Dataset directory")->required();
  interp->add_option("--probes", probes, "Probes per test sample");
  interp->add_option("--seed", seed, "Probe seed");
  interp->add_option("--out", out_file, "Probe report file");

  auto* sweep = app.add_subcommand("sweep-alpha", "Sweep alpha for each regularizer variant");
  sweep->add_option("--config", config, "JSON config file")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--alphas", alphas, "Comma-separated alpha values");
  sweep->add_option("--variants", variants, "Comma-separated variants (TE, NDE)");
  sweep->add_option("--cache", cache, "Stage-1 cache directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cfcap: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out_dir, out);
    if (train->parsed()) return cmd_train(config, data_dir, out_dir, cache, out);
    if (eval->parsed()) return cmd_evaluate(checkpoint, data_dir, config, out_dir, out);
    if (interp->parsed()) return cmd_interpret(checkpoint, data_dir, probes, seed, out_file, out);
    if (sweep->parsed()) return cmd_sweep(config, out_dir, alphas, variants, cache, out);
  } catch (const ConfigError& e) {
    err << "cfcap: configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "cfcap: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace cfcap::cli
