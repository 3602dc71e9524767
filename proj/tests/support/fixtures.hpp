// SPDX-License-Identifier: Apache-2.0
// Shared test fixtures: random toy inputs, independent reference
// implementations and hand-built caption models.
#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <limits>
#include <set>
#include <vector>

#include "cfcap/captioner/model.hpp"
#include "cfcap/causal/losses.hpp"
#include "cfcap/scenegen/world.hpp"

namespace cfcap::testing {

using captioner::Matrix;
using captioner::ModelConfig;
using captioner::ModelParams;

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cfcap-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ModelConfig tiny_config(int vocab = 6, int max_length = 8) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.eos_token = 0;
  c.num_cell_ids = 6;
  c.grid_height = 3;
  c.grid_width = 3;
  c.embed_dim = 4;
  c.num_heads = 2;
  c.attention_dim = 3;
  c.hidden_dim = 5;
  c.max_length = max_length;
  return c;
}

// Initialized parameters with a sharpened output head so that
// distributions are far from uniform.
inline ModelParams random_params(const ModelConfig& c, std::uint64_t seed, double head_scale = 4.0) {
  ModelParams p = ModelParams::initialize(c, seed);
  p.tensor(captioner::Tensor::kOutW) *= head_scale;
  Rng rng(seed ^ 0xb1a5ULL);
  auto b = p.tensor(captioner::Tensor::kOutB);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  auto hb = p.tensor(captioner::Tensor::kHiddenB);
  for (Eigen::Index i = 0; i < hb.size(); ++i) hb.data()[i] = 0.3 * rng.normal();
  return p;
}

inline SceneImage random_image(const ModelConfig& c, Rng& rng) {
  std::vector<CellId> cells(c.grid_cells());
  for (auto& x : cells) x = static_cast<CellId>(rng.below(c.num_cell_ids));
  return SceneImage(c.grid_height, c.grid_width, cells);
}

inline TokenSeq random_tokens(int len, int vocab, Rng& rng, bool allow_eos = true) {
  TokenSeq t(len);
  for (auto& x : t) x = static_cast<TokenId>(allow_eos ? rng.below(vocab) : 1 + rng.below(vocab - 1));
  return t;
}

// Random tuple with one target span of 1-2 tokens over 1-3 cells. The
// captions are not grammatical; losses only need valid ids and positions.
inline CounterfactualSample random_cf_sample(const ModelConfig& c, Rng& rng) {
  CounterfactualSample s;
  s.factual_image = random_image(c, rng);
  const int len = static_cast<int>(rng.between(3, c.max_length - 1));
  s.factual_caption.tokens = random_tokens(len - 1, c.vocab_size, rng, false);
  s.factual_caption.tokens.push_back(c.eos_token);
  EntitySpan span;
  span.length = static_cast<int>(rng.between(1, 2));
  span.start = static_cast<int>(rng.between(0, len - 1 - span.length));
  std::vector<int> all(c.grid_cells());
  for (int i = 0; i < c.grid_cells(); ++i) all[i] = i;
  rng.shuffle(all);
  span.cells.assign(all.begin(), all.begin() + rng.between(1, 3));
  std::sort(span.cells.begin(), span.cells.end());
  // The intervention must change something.
  for (int c : span.cells) {
    if (s.factual_image.at(c) == kMaskCell) s.factual_image.set(c, kFirstObjectCell);
  }
  s.factual_caption.spans = {span};
  s.target_span = 0;
  s.cf_image = s.factual_image.masked(span.cells);
  const int cf_len = static_cast<int>(rng.between(1, c.max_length - 1));
  s.cf_caption = random_tokens(cf_len - 1, c.vocab_size, rng, false);
  s.cf_caption.push_back(c.eos_token);
  return s;
}

// ---- Per-token reference implementations (one forward call per token). ----

inline double ref_log_prob(const ModelParams& p, const SceneImage& image, std::span<const TokenId> prefix,
                           TokenId token) {
  return captioner::forward(p, image, prefix).log_prob(token);
}

inline double ref_nll(const ModelParams& p, const SceneImage& image, const TokenSeq& tokens) {
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    total -= ref_log_prob(p, image, std::span(tokens).first(i), tokens[i]);
  }
  return total;
}

inline double ref_cf_average(const ModelParams& p, const SceneImage& image, const TokenSeq& cf, TokenId token,
                             double floor) {
  double sum = 0.0;
  for (std::size_t i = 0; i < cf.size(); ++i) {
    sum += std::max(ref_log_prob(p, image, std::span(cf).first(i), token), floor);
  }
  return sum / static_cast<double>(cf.size());
}

inline double ref_te(const ModelParams& p, const CounterfactualSample& s, double floor) {
  const auto& span = s.target();
  const auto& S = s.factual_caption.tokens;
  double total = 0.0;
  for (int j = 0; j < span.length; ++j) {
    const TokenId tok = S[span.start + j];
    const double factual = ref_log_prob(p, s.factual_image, std::span(S).first(span.start + j), tok);
    total -= factual - ref_cf_average(p, s.cf_image, s.cf_caption, tok, floor);
  }
  return total;
}

inline double ref_nde(const ModelParams& p, const CounterfactualSample& s, double floor) {
  const auto& span = s.target();
  const auto& S = s.factual_caption.tokens;
  double total = 0.0;
  for (int j = 0; j < span.length; ++j) {
    const TokenId tok = S[span.start + j];
    total -= ref_cf_average(p, s.factual_image, s.cf_caption, tok, floor) -
             ref_cf_average(p, s.cf_image, s.cf_caption, tok, floor);
  }
  return total;
}

// ---- Finite differences. ----

// Central differences of f over every parameter.
template <typename F>
std::vector<double> numeric_gradient(ModelParams p, F f, double step = 1e-4) {
  std::vector<double> g(p.size());
  auto flat = p.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x = flat[i];
    flat[i] = x + step;
    const double up = f(p);
    flat[i] = x - step;
    const double down = f(p);
    flat[i] = x;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

// ||a - n|| / max(||a||, ||n||), 0 when both vanish.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// Model whose log-probability of `target` depends only on whether the image
// contains exactly one mask cell (counterfactual) or none (factual) and on
// whether the decoder position is 0 or later. Saturated tanh units act as
// exact indicators, so the four log-probabilities are hit to rounding.
// Every other token shares the remaining mass equally.
struct TableLogProbs {
  double factual_first, factual_later, cf_first, cf_later;
};

inline ModelParams table_model(const ModelConfig& c, TokenId target, const TableLogProbs& t) {
  using captioner::Tensor;
  ModelParams p(c);
  const int d = c.embed_dim;
  const double n = c.grid_cells();
  const double k = 100.0;
  p.tensor(Tensor::kCellEmbed)(kMaskCell, 0) = 1.0;
  auto pos = p.tensor(Tensor::kPositionEmbed);
  for (int i = 0; i < c.max_length; ++i) pos(i, 1) = i == 0 ? -0.5 : 0.5;
  auto hw = p.tensor(Tensor::kHiddenW);
  auto hb = p.tensor(Tensor::kHiddenB);
  hw(d + 0, 0) = k * n;  // image unit
  hb(0, 0) = -0.5 * k;
  hw(1, 1) = k;  // position unit
  hw(d + 0, 2) = k * n;  // both
  hw(1, 2) = k;
  hb(0, 2) = -1.0 * k;

  auto logit = [&](double lp) {
    const double pr = std::exp(lp);
    return std::log((c.vocab_size - 1) * pr / (1.0 - pr));
  };
  Eigen::Matrix4d a;
  a << 1, -1, -1, -1,  //
      1, -1, 1, -1,    //
      1, 1, -1, -1,    //
      1, 1, 1, 1;
  Eigen::Vector4d z(logit(t.factual_first), logit(t.factual_later), logit(t.cf_first), logit(t.cf_later));
  const Eigen::Vector4d coef = a.fullPivLu().solve(z);
  p.tensor(Tensor::kOutB)(0, target) = coef(0);
  for (int h = 0; h < 3; ++h) p.tensor(Tensor::kOutW)(h, target) = coef(h + 1);
  return p;
}

// ---- Hand-built caption models. ----

// Follows the caption grammar over the objects visible in the image (any
// unmasked cell), listing them by first visible cell. The grammatical next
// token gets probability 1 - eps, every other token eps / (V - 1). Inside a
// phrase the phrase is always continued, so only the choice of the next
// object looks at the image.
class CopyOracle final : public captioner::CaptionModel {
 public:
  CopyOracle(const scenegen::WorldConfig& world, double eps = 1e-3)
      : vocab_(world), max_length_(world.max_caption_length), eps_(eps) {}

  int vocab_size() const override { return vocab_.size(); }
  TokenId eos() const override { return scenegen::Vocabulary::kEos; }
  int max_length() const override { return max_length_; }

  Matrix log_prob_rows(const SceneImage& image, std::span<const TokenId> prefix) const override {
    const int V = vocab_size();
    const std::vector<int> visible = visible_objects(image);
    Matrix rows(prefix.size() + 1, V);
    for (std::size_t i = 0; i <= prefix.size(); ++i) {
      rows.row(i).setConstant(std::log(eps_ / (V - 1)));
      rows(i, expected_next(visible, prefix.first(i))) = std::log(1.0 - eps_);
    }
    return rows;
  }

  TokenSeq expected_caption(const SceneImage& image) const {
    const std::vector<int> visible = visible_objects(image);
    TokenSeq out;
    while (out.empty() || out.back() != eos()) out.push_back(expected_next(visible, out));
    return out;
  }

 private:
  std::vector<int> visible_objects(const SceneImage& image) const {
    std::vector<std::pair<int, int>> first;  // (first cell, object)
    for (int o = 0; o < vocab_.num_objects(); ++o) {
      for (int c = 0; c < image.size(); ++c) {
        if (image.at(c) == scenegen::Vocabulary::cell_id(o)) {
          first.push_back({c, o});
          break;
        }
      }
    }
    std::sort(first.begin(), first.end());
    std::vector<int> out;
    for (const auto& f : first) out.push_back(f.second);
    return out;
  }

  TokenId expected_next(const std::vector<int>& visible, std::span<const TokenId> prefix) const {
    using scenegen::Vocabulary;
    std::set<int> mentioned;
    std::size_t i = 0;
    int open_object = -1;  // object whose phrase is partially emitted
    int open_words = 0;
    bool after_article = false, closed = false, finished = false;
    TokenId last = -1;
    while (i < prefix.size()) {
      const TokenId t = prefix[i];
      last = t;
      if (open_object >= 0) {
        ++open_words;
        ++i;
        if (open_words == static_cast<int>(vocab_.phrase(open_object).size())) {
          mentioned.insert(open_object);
          open_object = -1;
        }
        continue;
      }
      if (after_article) {
        after_article = false;
        for (int o = 0; o < vocab_.num_objects(); ++o) {
          if (vocab_.phrase(o).front() == t) open_object = o;
        }
        open_words = 1;
        if (open_object >= 0 && vocab_.phrase(open_object).size() == 1) {
          mentioned.insert(open_object);
          open_object = -1;
        }
        ++i;
        continue;
      }
      if (t == Vocabulary::kArticle) after_article = true;
      if (t == Vocabulary::kPeriod) closed = true;
      if (t == Vocabulary::kEos) finished = true;
      ++i;
    }
    if (finished || closed) return Vocabulary::kEos;
    if (open_object >= 0) return vocab_.phrase(open_object)[open_words];
    int next_object = -1;
    for (int o : visible) {
      if (!mentioned.count(o)) {
        next_object = o;
        break;
      }
    }
    if (after_article) return next_object >= 0 ? vocab_.phrase(next_object).front() : Vocabulary::kPeriod;
    if (prefix.empty() || last == Vocabulary::kAnd) {
      return next_object >= 0 ? Vocabulary::kArticle : Vocabulary::kPeriod;
    }
    return next_object >= 0 ? Vocabulary::kAnd : Vocabulary::kPeriod;
  }

  scenegen::Vocabulary vocab_;
  int max_length_;
  double eps_;
};

// Log-probabilities are log-softmax of hash noise keyed by (image, prefix),
// so every masked image yields an independent, identically distributed
// response: uniform in expectation, never exactly tied.
class NoiseModel final : public captioner::CaptionModel {
 public:
  NoiseModel(int vocab, int max_length, std::uint64_t seed) : vocab_(vocab), max_length_(max_length), seed_(seed) {}

  int vocab_size() const override { return vocab_; }
  TokenId eos() const override { return 0; }
  int max_length() const override { return max_length_; }

  Matrix log_prob_rows(const SceneImage& image, std::span<const TokenId> prefix) const override {
    std::uint64_t h = seed_;
    for (CellId c : image.cells()) h = splitmix64(h ^ static_cast<std::uint64_t>(c + 1));
    Matrix logits(prefix.size() + 1, vocab_);
    for (std::size_t i = 0; i <= prefix.size(); ++i) {
      if (i > 0) h = splitmix64(h ^ static_cast<std::uint64_t>(prefix[i - 1] + 7));
      Rng rng(h);
      for (int t = 0; t < vocab_; ++t) logits(i, t) = rng.normal();
    }
    return captioner::log_softmax_rows(logits);
  }

 private:
  int vocab_;
  int max_length_;
  std::uint64_t seed_;
};

}  // namespace cfcap::testing
