// SPDX-License-Identifier: Apache-2.0
#include "cfcap/captioner/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfcap::captioner {

Strategy strategy_from_string(const std::string& name) {
  if (name == "beam") return Strategy::kBeam;
  if (name == "greedy") return Strategy::kGreedy;
  if (name == "top_k") return Strategy::kTopK;
  if (name == "nucleus") return Strategy::kNucleus;
  if (name == "ancestral") return Strategy::kAncestral;
  throw ConfigError("unknown decoding strategy '" + name + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kBeam: return "beam";
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTopK: return "top_k";
    case Strategy::kNucleus: return "nucleus";
    case Strategy::kAncestral: return "ancestral";
  }
  return "?";
}

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ConfigError("decode.beam_width must be >= 1");
  if (top_k < 1) throw ConfigError("decode.top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decode.top_p must be in (0, 1]");
  if (max_length < 1) throw ConfigError("decode.max_length must be >= 1");
}

bool token_order_less(const TokenSeq& a, const TokenSeq& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

namespace {

struct Beam {
  TokenSeq tokens;
  double log_prob = 0.0;
  bool finished = false;
};

bool better(const Beam& a, const Beam& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return token_order_less(a.tokens, b.tokens);
}

int effective_length(const CaptionModel& model, int max_length) {
  return std::min(max_length, model.max_length());
}

// Ids sorted by probability descending, ties by id.
std::vector<TokenId> ranked_ids(const Vector& probs) {
  std::vector<TokenId> ids(probs.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](TokenId a, TokenId b) { return probs(a) > probs(b); });
  return ids;
}

TokenId argmax_token(const Vector& log_probs) {
  TokenId best = 0;
  for (TokenId v = 1; v < log_probs.size(); ++v) {
    if (log_probs(v) > log_probs(best)) best = v;
  }
  return best;
}

// Draws from the renormalized kept set, walking kept ids in id order so a
// full kept set reproduces plain ancestral sampling draw for draw.
TokenId sample_kept(const Vector& probs, const std::vector<char>& kept, Rng& rng) {
  double total = 0.0;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    if (kept[v]) total += probs(v);
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  TokenId last = -1;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    if (!kept[v]) continue;
    acc += probs(v);
    last = static_cast<TokenId>(v);
    if (u < acc) return last;
  }
  return last;
}

TokenId sample_step(const TokenDistribution& dist, const DecodeConfig& cfg, Rng& rng) {
  const Vector probs = dist.log_probs.array().exp();
  std::vector<char> kept(probs.size(), 0);
  switch (cfg.strategy) {
    case Strategy::kAncestral:
      std::fill(kept.begin(), kept.end(), 1);
      break;
    case Strategy::kTopK: {
      const auto ids = ranked_ids(probs);
      const int k = std::min<int>(cfg.top_k, static_cast<int>(ids.size()));
      for (int i = 0; i < k; ++i) kept[ids[i]] = 1;
      break;
    }
    case Strategy::kNucleus: {
      if (cfg.top_p >= 1.0) {
        std::fill(kept.begin(), kept.end(), 1);
        break;
      }
      double acc = 0.0;
      for (TokenId id : ranked_ids(probs)) {
        kept[id] = 1;
        acc += probs(id);
        if (acc >= cfg.top_p) break;
      }
      break;
    }
    default:
      throw ConfigError("sample_step: not a sampling strategy");
  }
  return sample_kept(probs, kept, rng);
}

}  // namespace

std::vector<Hypothesis> beam_search(const CaptionModel& model, const SceneImage& image,
                                    int width, int max_length) {
  if (width < 1) throw ConfigError("beam width must be >= 1");
  const int limit = effective_length(model, max_length);
  if (limit < 1) throw ConfigError("max_length must be >= 1");
  const TokenId eos = model.eos();

  std::vector<Beam> pool{Beam{}};
  while (std::any_of(pool.begin(), pool.end(), [](const Beam& b) { return !b.finished; })) {
    std::vector<Beam> candidates;
    for (const Beam& b : pool) {
      if (b.finished) {
        candidates.push_back(b);
        continue;
      }
      const TokenDistribution dist = model.next(image, b.tokens);
      for (TokenId v = 0; v < dist.size(); ++v) {
        Beam c{b.tokens, b.log_prob + dist.log_prob(v), false};
        c.tokens.push_back(v);
        c.finished = v == eos || static_cast<int>(c.tokens.size()) >= limit;
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min<std::size_t>(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);
    pool = std::move(candidates);
  }

  std::vector<Hypothesis> out;
  out.reserve(pool.size());
  for (auto& b : pool) out.push_back({std::move(b.tokens), b.log_prob});
  return out;
}

TokenSeq decode(const CaptionModel& model, const SceneImage& image, const DecodeConfig& cfg) {
  cfg.validate();
  const int limit = effective_length(model, cfg.max_length);
  if (cfg.strategy == Strategy::kBeam) {
    return beam_search(model, image, cfg.beam_width, limit).front().tokens;
  }
  Rng rng(cfg.seed);
  TokenSeq tokens;
  while (static_cast<int>(tokens.size()) < limit) {
    const TokenDistribution dist = model.next(image, tokens);
    const TokenId t = cfg.strategy == Strategy::kGreedy ? argmax_token(dist.log_probs)
                                                        : sample_step(dist, cfg, rng);
    tokens.push_back(t);
    if (t == model.eos()) break;
  }
  return tokens;
}

CandidateList top_n_captions(const CaptionModel& model, const SceneImage& image, int n,
                             int beam_width, int max_length) {
  if (n < 1) throw InputError("top_n_captions: n must be >= 1");
  auto pool = beam_search(model, image, std::max(n, beam_width), max_length);
  CandidateList out;
  out.short_list = static_cast<int>(pool.size()) < n;
  pool.resize(std::min<std::size_t>(pool.size(), n));
  out.captions = std::move(pool);
  return out;
}

}  // namespace cfcap::captioner
