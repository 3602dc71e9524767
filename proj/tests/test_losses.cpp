// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cfcap/causal/losses.hpp"
#include "support/fixtures.hpp"

using namespace cfcap;
using namespace cfcap::causal;
using namespace cfcap::testing;

namespace {

const double kFloor = kDefaultLogProbFloor;

// Factual caption [target, eos]; cf caption [other, eos]; one masked cell.
CounterfactualSample two_token_sample(const ModelConfig& c, TokenId target, int span_start = 0, int span_len = 1) {
  CounterfactualSample s;
  s.factual_image = SceneImage::blank(c.grid_height, c.grid_width);
  s.factual_image.set(4, kFirstObjectCell);
  s.factual_caption.tokens.assign(span_start + span_len, target);
  s.factual_caption.tokens.push_back(c.eos_token);
  s.factual_caption.spans = {EntitySpan{span_start, span_len, {4}}};
  s.cf_image = s.factual_image.masked(std::vector<int>{4});
  s.cf_caption = {2, c.eos_token};
  return s;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("variant names and config validation") {
    CHECK(variant_from_string("TE") == Variant::kTE);
    CHECK(to_string(Variant::kNDE) == "NDE");
    CHECK_THROWS_AS(variant_from_string("TIE"), ConfigError);
    RegularizationConfig r;
    r.alpha = 1.5;
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.alpha = 0.5;
    r.log_prob_floor = 0.0;
    CHECK_THROWS_AS(r.validate(), ConfigError);
    CHECK(std::abs(kDefaultLogProbFloor + 18.420680743952367) < 1e-12);
  }

  TEST_CASE("losses match per-token reference loops on 100 fixtures") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(2024);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto p = random_params(cfg, 3000 + k);
      const auto s = random_cf_sample(cfg, rng);
      const CaptionView view{&s.factual_image, s.factual_caption.tokens};
      const double nll = nll_loss(p, std::span(&view, 1));
      worst = std::max(worst, std::abs(nll - ref_nll(p, s.factual_image, s.factual_caption.tokens)));
      worst = std::max(worst, std::abs(nll + captioner::sequence_log_prob(p, s.factual_image, s.factual_caption.tokens)));
      worst = std::max(worst, std::abs(te_loss(p, s, kFloor) - ref_te(p, s, kFloor)));
      worst = std::max(worst, std::abs(nde_loss(p, s, kFloor) - ref_nde(p, s, kFloor)));
    }
    CHECK(worst < 1e-9);
  }

  TEST_CASE("nll over a batch is the sum over captions") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(5);
    const auto p = random_params(cfg, 5);
    std::vector<CounterfactualSample> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(random_cf_sample(cfg, rng));
    std::vector<CaptionView> views;
    double expected = 0.0;
    for (const auto& s : samples) {
      views.push_back({&s.factual_image, s.factual_caption.tokens});
      expected += ref_nll(p, s.factual_image, s.factual_caption.tokens);
    }
    CHECK(std::abs(nll_loss(p, views) - expected) < 1e-9);
    CHECK(nll_loss(p, views) >= 0.0);
    CHECK_THROWS_AS(nll_loss(p, std::span<const CaptionView>{}), InputError);
  }

  TEST_CASE("uniform model") {
    const auto cfg = tiny_config(4, 8);
    const ModelParams zero(cfg);
    const auto img = SceneImage::blank(3, 3);
    const TokenSeq caption{1, 2, 0};
    const CaptionView view{&img, caption};
    CHECK(std::abs(nll_loss(zero, std::span(&view, 1)) - 3 * std::log(4.0)) < 1e-12);
    CHECK(std::abs(nll_loss(zero, std::span(&view, 1)) - 4.1589) < 1e-4);
    Rng rng(1);
    for (int k = 0; k < 10; ++k) {
      const auto s = random_cf_sample(cfg, rng);
      CHECK(std::abs(te_loss(zero, s)) < 1e-12);
      CHECK(std::abs(nde_loss(zero, s)) < 1e-12);
    }
  }

  TEST_CASE("TE hand fixture: factual -0.1, counterfactual {-2.0, -3.0}") {
    const auto cfg = tiny_config(6, 8);
    const TokenId target = 3;
    const auto p = table_model(cfg, target, {-0.1, -1.0, -2.0, -3.0});
    const auto s = two_token_sample(cfg, target);
    CHECK(std::abs(ref_log_prob(p, s.factual_image, {}, target) + 0.1) < 1e-9);
    CHECK(std::abs(te_loss(p, s) + 2.4) < 1e-9);
  }

  TEST_CASE("TE with equal terms cancels for a two-token entity") {
    const auto cfg = tiny_config(6, 8);
    const auto p = table_model(cfg, 3, {-1.0, -1.0, -1.0, -1.0});
    const auto s = two_token_sample(cfg, 3, 0, 2);
    CHECK(std::abs(te_loss(p, s)) < 1e-9);
  }

  TEST_CASE("NDE hand fixture: factual image {-1.0, -1.5}, counterfactual {-2.0, -2.5}") {
    const auto cfg = tiny_config(6, 8);
    const auto p = table_model(cfg, 3, {-1.0, -1.5, -2.0, -2.5});
    const auto s = two_token_sample(cfg, 3);
    CHECK(std::abs(nde_loss(p, s) + 1.0) < 1e-9);
  }

  TEST_CASE("NDE is exactly zero under the null intervention") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(77);
    for (int k = 0; k < 100; ++k) {
      const auto p = random_params(cfg, 7000 + k);
      auto s = random_cf_sample(cfg, rng);
      s.cf_image = s.factual_image;
      ModelParams grad(cfg);
      CHECK(std::abs(nde_loss(p, s, kFloor, &grad)) < 1e-9);
      CHECK(grad.squared_norm() < 1e-18);
    }
  }

  TEST_CASE("analytic gradients match central differences") {
    const auto cfg = tiny_config(5, 6);
    Rng rng(99);
    for (int k = 0; k < 10; ++k) {
      const auto p = random_params(cfg, 4000 + k, 1.5);
      const auto s = random_cf_sample(cfg, rng);
      const CaptionView view{&s.factual_image, s.factual_caption.tokens};
      const auto batch = std::span(&view, 1);

      ModelParams g(cfg);
      nll_loss(p, batch, &g);
      auto num = numeric_gradient(p, [&](const ModelParams& q) { return nll_loss(q, batch); });
      CHECK(relative_error(g.flat(), num) < 1e-4);

      g.set_zero();
      te_loss(p, s, kFloor, &g);
      num = numeric_gradient(p, [&](const ModelParams& q) { return te_loss(q, s, kFloor); });
      CHECK(relative_error(g.flat(), num) < 1e-4);

      g.set_zero();
      nde_loss(p, s, kFloor, &g);
      num = numeric_gradient(p, [&](const ModelParams& q) { return nde_loss(q, s, kFloor); });
      CHECK(relative_error(g.flat(), num) < 1e-4);
    }
  }

  TEST_CASE("floored terms carry no gradient") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(3);
    const auto p = random_params(cfg, 3);
    const auto s = random_cf_sample(cfg, rng);
    ModelParams g(cfg);
    // Every log-probability lies below a floor just under zero.
    CHECK(nde_loss(p, s, -1e-300, &g) == 0.0);
    CHECK(g.squared_norm() == 0.0);
  }

  TEST_CASE("regularizers stay finite for extreme parameters") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(11);
    for (int k = 0; k < 20; ++k) {
      const auto p = random_params(cfg, 50 + k, 1e6);
      const auto s = random_cf_sample(cfg, rng);
      const double te = te_loss(p, s);
      const double nde = nde_loss(p, s);
      CHECK(std::isfinite(te));
      CHECK(std::isfinite(nde));
      const double bound = s.target().length * -kFloor;
      CHECK(std::abs(nde) <= bound + 1e-9);
      CHECK(te >= -bound - 1e-9);
    }
  }

  TEST_CASE("batch regularizer is the plain sum") {
    const auto cfg = tiny_config(6, 8);
    Rng rng(21);
    const auto p = random_params(cfg, 21);
    std::vector<CounterfactualSample> batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_cf_sample(cfg, rng));
    for (auto v : {Variant::kTE, Variant::kNDE}) {
      RegularizationConfig rc;
      rc.variant = v;
      double sum = 0.0;
      for (const auto& s : batch) sum += v == Variant::kTE ? te_loss(p, s) : nde_loss(p, s);
      CHECK(std::abs(regularization_loss(p, batch, rc) - sum) < 1e-9);
    }
  }

  TEST_CASE("malformed samples are rejected") {
    const auto cfg = tiny_config(6, 8);
    const auto p = random_params(cfg, 1);
    auto s = two_token_sample(cfg, 3);
    auto bad = s;
    bad.factual_caption.spans[0].length = 0;
    CHECK_THROWS_AS(te_loss(p, bad), InputError);
    CHECK_THROWS_AS(nde_loss(p, bad), InputError);
    bad = s;
    bad.cf_caption.clear();
    CHECK_THROWS_AS(te_loss(p, bad), InputError);
    CHECK_THROWS_AS(nde_loss(p, bad), InputError);
    bad = s;
    bad.target_span = 3;
    CHECK_THROWS_AS(te_loss(p, bad), InputError);
  }

  TEST_CASE("aggregate loss") {
    RegularizationConfig rc;
    rc.alpha = 0.5;
    CHECK(aggregate_loss(2.0, -1.0, rc) == doctest::Approx(0.5));
    rc.alpha = 1.0;
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      const double nll = rng.uniform() * 10, reg = rng.normal() * 1e3;
      CHECK(aggregate_loss(nll, reg, rc) == nll);
    }
    rc.alpha = 0.0;
    CHECK(aggregate_loss(3.25, -7.125, rc) == -7.125);
    rc.alpha = -0.1;
    CHECK_THROWS_AS(aggregate_loss(1.0, 1.0, rc), ConfigError);
  }
}
