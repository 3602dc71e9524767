// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "cfcap/cli/commands.hpp"
#include "cfcap/cli/config.hpp"
#include "cfcap/cli/plot.hpp"
#include "support/experiments.hpp"
#include "support/fixtures.hpp"

using namespace cfcap;
using namespace cfcap::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const nlohmann::ordered_json& j, const std::string& name = "config.json") {
  const auto path = dir / name;
  std::ofstream(path) << j.dump(2);
  return path;
}

nlohmann::ordered_json tiny_config_json() {
  auto cfg = tiny_experiment(64, 12);
  cfg.stage1.epochs = 1;
  cfg.eval.probes_per_sample = 1;
  return trainer::experiment_to_json(cfg);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(invoke({}).code == cli::kExitConfig);
    CHECK(invoke({"frobnicate"}).code == cli::kExitConfig);
    CHECK(invoke({"gen-data"}).code == cli::kExitConfig);
    const auto help = invoke({"--help"});
    CHECK(help.code == cli::kExitOk);
    CHECK(help.out.find("sweep-alpha") != std::string::npos);
  }

  TEST_CASE("gen-data writes a deterministic dataset") {
    const auto dir = scratch_dir("cli-gen");
    const auto config = write_config(dir, tiny_config_json());
    const auto a = invoke({"gen-data", "--config", config.string(), "--out", (dir / "a").string()});
    REQUIRE(a.code == cli::kExitOk);
    REQUIRE(invoke({"gen-data", "--config", config.string(), "--out", (dir / "b").string()}).code == cli::kExitOk);
    for (const char* f : {"manifest.json", "train.jsonl", "validation.jsonl", "test.jsonl"}) {
      CHECK(fs::exists(dir / "a" / f));
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(manifest.at("config_hash") == scenegen::config_hash(cli::load_experiment_config(config).world));
    fs::remove_all(dir);
  }

  TEST_CASE("malformed config fields exit with code 2 and name the field") {
    const auto dir = scratch_dir("cli-bad");
    const auto bad_type = write_config(dir, {{"world", {{"grid_height", "four"}}}}, "type.json");
    auto r = invoke({"gen-data", "--config", bad_type.string(), "--out", (dir / "x").string()});
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("grid_height") != std::string::npos);

    const auto unknown = write_config(dir, {{"train", {{"stage2", {{"alpah", 0.5}}}}}}, "unknown.json");
    r = invoke({"gen-data", "--config", unknown.string(), "--out", (dir / "x").string()});
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("alpah") != std::string::npos);

    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(invoke({"gen-data", "--config", (dir / "broken.json").string(), "--out", (dir / "x").string()}).code ==
          cli::kExitConfig);
    CHECK(invoke({"gen-data", "--config", (dir / "missing.json").string(), "--out", (dir / "x").string()}).code ==
          cli::kExitConfig);
    fs::remove_all(dir);
  }

  TEST_CASE("missing inputs are runtime failures") {
    const auto dir = scratch_dir("cli-missing");
    const auto config = write_config(dir, tiny_config_json());
    REQUIRE(invoke({"gen-data", "--config", config.string(), "--out", (dir / "data").string()}).code == cli::kExitOk);
    CHECK(invoke({"evaluate", "--checkpoint", (dir / "nope.json").string(), "--data", (dir / "data").string()}).code ==
          cli::kExitRuntime);
    CHECK(invoke({"interpret", "--checkpoint", (dir / "nope.json").string(), "--data", (dir / "data").string()}).code ==
          cli::kExitRuntime);
    CHECK(invoke({"train", "--config", config.string(), "--data", (dir / "nodata").string(), "--out",
               (dir / "run").string()})
              .code == cli::kExitRuntime);
    fs::remove_all(dir);
  }

  TEST_CASE("train, evaluate and interpret") {
    const auto dir = scratch_dir("cli-train");
    auto j = tiny_config_json();
    j["train"]["stages"] = 1;
    const auto config = write_config(dir, j);
    REQUIRE(invoke({"gen-data", "--config", config.string(), "--out", (dir / "data").string()}).code == cli::kExitOk);
    const auto t = invoke({"train", "--config", config.string(), "--data", (dir / "data").string(), "--out",
                        (dir / "run").string()});
    REQUIRE(t.code == cli::kExitOk);
    CHECK(t.out.find("CHAIR_s") != std::string::npos);

    const auto e = invoke({"evaluate", "--checkpoint", (dir / "run" / "stage1" / "checkpoint.json").string(), "--data",
                        (dir / "data").string(), "--config", config.string(), "--out", (dir / "eval").string()});
    REQUIRE(e.code == cli::kExitOk);
    const auto metrics = nlohmann::json::parse(slurp(dir / "eval" / "metrics.json"));
    for (const char* k : {"chair_s", "p_at_5", "ndcg_at_5", "bleu4", "rouge_l"}) CHECK(metrics.contains(k));
    CHECK_FALSE(metrics.contains("biased_error_rate"));
    CHECK(metrics == nlohmann::json::parse(slurp(dir / "run" / "metrics.json")));
    CHECK(e.out.find(slurp(dir / "eval" / "metrics.txt")) != std::string::npos);

    const auto i = invoke({"interpret", "--checkpoint", (dir / "run" / "stage1" / "checkpoint.json").string(), "--data",
                        (dir / "data").string(), "--probes", "2", "--out", (dir / "probes.json").string()});
    REQUIRE(i.code == cli::kExitOk);
    CHECK(nlohmann::json::parse(slurp(dir / "probes.json")).at("num_probes") == 24);

    // A dataset built from another world is rejected.
    auto other = tiny_config_json();
    other["world"]["seed"] = 5;
    const auto other_cfg = write_config(dir, other, "other.json");
    CHECK(invoke({"train", "--config", other_cfg.string(), "--data", (dir / "data").string(), "--out",
               (dir / "run2").string()})
              .code == cli::kExitConfig);
    fs::remove_all(dir);
  }

  TEST_CASE("biased datasets report error rates") {
    const auto dir = scratch_dir("cli-bias");
    auto j = tiny_config_json();
    j["bias"] = scenegen::bias_to_json(scenegen::BiasSpec{.train_biased = 60, .train_other = 12, .test_biased = 12,
                                                          .test_other = 6, .validation_biased = 6, .validation_other = 0});
    j["train"]["stages"] = 1;
    j["eval"]["interpretability"] = false;
    const auto config = write_config(dir, j);
    REQUIRE(invoke({"gen-data", "--config", config.string(), "--out", (dir / "data").string()}).code == cli::kExitOk);
    CHECK(fs::exists(dir / "data" / "bias_test.jsonl"));
    REQUIRE(invoke({"train", "--config", config.string(), "--data", (dir / "data").string(), "--out",
                 (dir / "run").string()})
                .code == cli::kExitOk);
    const auto e = invoke({"evaluate", "--checkpoint", (dir / "run" / "stage1" / "checkpoint.json").string(), "--data",
                        (dir / "data").string(), "--config", config.string()});
    REQUIRE(e.code == cli::kExitOk);
    CHECK(e.out.find("biased_error_rate") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("sweep rows and the alpha = 1 baseline") {
    const auto dir = scratch_dir("cli-sweep");
    auto j = tiny_config_json();
    j["eval"]["interpretability"] = false;
    const auto config = write_config(dir, j);
    const auto s = invoke({"sweep-alpha", "--config", config.string(), "--out", (dir / "sweep").string()});
    REQUIRE(s.code == cli::kExitOk);
    const auto sweep = nlohmann::json::parse(slurp(dir / "sweep" / "sweep.json"));
    REQUIRE(sweep.at("rows").size() == 10);
    int te = 0, nde = 0;
    for (const auto& row : sweep.at("rows")) (row.at("variant") == "TE" ? te : nde)++;
    CHECK(te == 5);
    CHECK(nde == 5);
    CHECK(fs::exists(dir / "sweep" / "sweep.csv"));
    const auto svg = slurp(dir / "sweep" / "sweep.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("BLEU-4") != std::string::npos);

    // The baseline, trained and evaluated through separate commands.
    auto base = j;
    base["train"]["stage2"]["alpha"] = 1.0;
    const auto base_cfg = write_config(dir, base, "baseline.json");
    REQUIRE(invoke({"gen-data", "--config", base_cfg.string(), "--out", (dir / "data").string()}).code == cli::kExitOk);
    REQUIRE(invoke({"train", "--config", base_cfg.string(), "--data", (dir / "data").string(), "--out",
                 (dir / "baseline").string()})
                .code == cli::kExitOk);
    REQUIRE(invoke({"evaluate", "--checkpoint", (dir / "baseline" / "stage2" / "checkpoint.json").string(), "--data",
                 (dir / "data").string(), "--config", base_cfg.string(), "--out", (dir / "baseline-eval").string()})
                .code == cli::kExitOk);
    const auto baseline = nlohmann::json::parse(slurp(dir / "baseline-eval" / "metrics.json"));
    for (const auto& row : sweep.at("rows")) {
      if (row.at("alpha") == 1.0) CHECK(row.at("metrics") == baseline);
    }
    CHECK(invoke({"sweep-alpha", "--config", config.string(), "--out", (dir / "x").string(), "--alphas", "0.5,abc"}).code ==
          cli::kExitConfig);
    CHECK(invoke({"sweep-alpha", "--config", config.string(), "--out", (dir / "x").string(), "--variants", "TIE"}).code ==
          cli::kExitConfig);
    fs::remove_all(dir);
  }

  TEST_CASE("sweep plot") {
    const std::vector<cli::SweepRow> rows{{"TE", 0.9, 0.1, 0.8}, {"TE", 1.0, 0.2, 0.81}, {"NDE", 0.9, 0.05, 0.79},
                                          {"NDE", 1.0, 0.2, 0.81}};
    const auto svg = cli::sweep_svg(rows);
    CHECK(svg.find("CHAIR") != std::string::npos);
    CHECK(svg.find("NDE") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
}
