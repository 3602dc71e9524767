// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cfcap/common.hpp"

namespace cfcap::metrics {

// A generated caption and the phrase whose region was masked.
struct MaskedCaption {
  TokenSeq caption;
  TokenSeq phrase;
};

// Fraction of captions that still mention their masked phrase (contiguous
// token match).
double chair_s(std::span<const MaskedCaption> captions);

// Candidates best first; relevance 1 means the masked phrase is absent.
struct RankingJudgment {
  std::vector<int> relevance;

  static RankingJudgment from_candidates(std::span<const TokenSeq> candidates,
                                         std::span<const TokenId> masked_phrase);
  void validate() const;
};

// Both pad missing candidates with relevance 0; `padded` reports it.
double precision_at_k(const RankingJudgment& judgment, int k, bool* padded = nullptr);
// Gain = relevance, discount 1/log2(rank + 1), ideal = positives first,
// 0 when there is no positive.
double ndcg_at_k(const RankingJudgment& judgment, int k, bool* padded = nullptr);

// Clipped n-gram statistics for BLEU-4.
struct BleuStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_length = 0;
  long ref_length = 0;  // closest reference length, shorter on ties

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(std::span<const TokenId> hypothesis, std::span<const TokenSeq> references);
// Uniform weights, brevity penalty, zero match counts replaced by 1e-9.
double bleu4_from_stats(const BleuStats& stats);
double bleu4(std::span<const TokenId> hypothesis, std::span<const TokenSeq> references);
// Corpus-level BLEU-4 with one reference set per hypothesis.
double corpus_bleu4(std::span<const TokenSeq> hypotheses,
                    std::span<const std::vector<TokenSeq>> references);

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);
// LCS F-measure with beta = 1.
double rouge_l(std::span<const TokenId> hypothesis, std::span<const TokenId> reference);

struct ErrorRate {
  double rate = 0.0;
  int count = 0;
  int total = 0;

  // "13.91% (283)"
  std::string to_string() const;
};

ErrorRate error_rate_from_counts(int errors, int total);

// Among references mentioning a class-B phrase, the fraction whose
// prediction mentions a class-A phrase.
ErrorRate biased_error_rate(std::span<const TokenSeq> predictions, std::span<const TokenSeq> references,
                            std::span<const TokenSeq> class_a_phrases,
                            std::span<const TokenSeq> class_b_phrases);

// Drops trailing end-of-sequence tokens before text metrics.
TokenSeq strip_eos(std::span<const TokenId> tokens, TokenId eos);

}  // namespace cfcap::metrics
