// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfcap/captioner/model.hpp"

namespace cfcap::captioner {

enum class Strategy { kBeam, kGreedy, kTopK, kNucleus, kAncestral };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

struct DecodeConfig {
  Strategy strategy = Strategy::kBeam;
  int beam_width = 5;
  int top_k = 10;
  double top_p = 0.8;
  int max_length = 20;  // clipped to the model's capacity
  std::uint64_t seed = 0;

  void validate() const;
};

struct Hypothesis {
  TokenSeq tokens;
  double log_prob = 0.0;
};

// Lexicographic token-id order; shorter sequence first on a shared prefix.
bool token_order_less(const TokenSeq& a, const TokenSeq& b);

// Completed-beam search over raw (unnormalized) log-probabilities. Finished
// hypotheses stay in the pool and compete with live ones for the `width`
// slots; the search ends once every pooled hypothesis is finished, a
// hypothesis being finished at eos or at `max_length` tokens. Returns the
// final pool, best first, ties broken by token order.
std::vector<Hypothesis> beam_search(const CaptionModel& model, const SceneImage& image,
                                    int width, int max_length);

TokenSeq decode(const CaptionModel& model, const SceneImage& image,
                const DecodeConfig& config);

struct CandidateList {
  std::vector<Hypothesis> captions;  // best first
  bool short_list = false;           // fewer than n completable hypotheses
};

// The n best captions by beam search (width = max(n, beam_width)).
CandidateList top_n_captions(const CaptionModel& model, const SceneImage& image, int n,
                             int beam_width = 5, int max_length = 20);

}  // namespace cfcap::captioner
