// SPDX-License-Identifier: Apache-2.0
#include "cfcap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace cfcap::metrics {

double chair_s(std::span<const MaskedCaption> captions) {
  if (captions.empty()) throw InputError("chair_s: empty caption set");
  int hallucinated = 0;
  for (const auto& c : captions) {
    if (c.phrase.empty()) throw InputError("chair_s: empty masked phrase");
    if (contains_subsequence(c.caption, c.phrase)) ++hallucinated;
  }
  return static_cast<double>(hallucinated) / static_cast<double>(captions.size());
}

RankingJudgment RankingJudgment::from_candidates(std::span<const TokenSeq> candidates,
                                                 std::span<const TokenId> masked_phrase) {
  RankingJudgment j;
  for (const auto& c : candidates) j.relevance.push_back(contains_subsequence(c, masked_phrase) ? 0 : 1);
  return j;
}

void RankingJudgment::validate() const {
  for (int r : relevance) {
    if (r != 0 && r != 1) throw InputError("ranking judgment: relevance must be 0 or 1");
  }
}

namespace {

std::vector<int> padded_relevance(const RankingJudgment& j, int k, bool* padded) {
  if (k < 1) throw InputError("ranking metrics: k must be >= 1");
  j.validate();
  std::vector<int> rel(j.relevance.begin(), j.relevance.begin() + std::min<std::size_t>(k, j.relevance.size()));
  if (padded != nullptr) *padded = static_cast<int>(rel.size()) < k;
  rel.resize(k, 0);
  return rel;
}

}  // namespace

double precision_at_k(const RankingJudgment& judgment, int k, bool* padded) {
  const auto rel = padded_relevance(judgment, k, padded);
  int hits = 0;
  for (int r : rel) hits += r;
  return static_cast<double>(hits) / k;
}

double ndcg_at_k(const RankingJudgment& judgment, int k, bool* padded) {
  const auto rel = padded_relevance(judgment, k, padded);
  double dcg = 0.0;
  int positives = 0;
  for (int i = 0; i < k; ++i) {
    dcg += rel[i] / std::log2(i + 2.0);
    positives += rel[i];
  }
  // Ideal list: every positive of the judgment first.
  int total_pos = 0;
  for (int r : judgment.relevance) total_pos += r;
  if (total_pos == 0) return 0.0;
  double ideal = 0.0;
  for (int i = 0; i < std::min(total_pos, k); ++i) ideal += 1.0 / std::log2(i + 2.0);
  return dcg / ideal;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

namespace {

using NgramCounts = std::map<TokenSeq, long>;

NgramCounts count_ngrams(std::span<const TokenId> s, int n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[TokenSeq(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenSeq> references) {
  if (references.empty()) throw InputError("bleu: no references");
  for (const auto& r : references) {
    if (r.empty()) throw InputError("bleu: empty reference");
  }
  BleuStats s;
  s.hyp_length = static_cast<long>(hyp.size());
  long best_diff = -1;
  for (const auto& r : references) {
    const long len = static_cast<long>(r.size());
    const long diff = std::labs(len - s.hyp_length);
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && len < s.ref_length)) {
      best_diff = diff;
      s.ref_length = len;
    }
  }
  for (int n = 1; n <= 4; ++n) {
    const NgramCounts h = count_ngrams(hyp, n);
    NgramCounts max_ref;
    for (const auto& r : references) {
      for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    long matched = 0, total = 0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = total;
  }
  return s;
}

double bleu4_from_stats(const BleuStats& s) {
  if (s.hyp_length == 0) return 0.0;
  constexpr double kEpsilon = 1e-9;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double num = s.matches[n] > 0 ? static_cast<double>(s.matches[n]) : kEpsilon;
    const double den = static_cast<double>(std::max<long>(s.totals[n], 1));
    log_sum += std::log(num / den);
  }
  const double bp = s.hyp_length >= s.ref_length
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length));
  return bp * std::exp(log_sum / 4.0);
}

double bleu4(std::span<const TokenId> hypothesis, std::span<const TokenSeq> references) {
  return bleu4_from_stats(bleu_stats(hypothesis, references));
}

double corpus_bleu4(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references) {
  if (hypotheses.size() != references.size()) throw InputError("corpus_bleu4: size mismatch");
  if (hypotheses.empty()) throw InputError("corpus_bleu4: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  return bleu4_from_stats(total);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenId> hypothesis, std::span<const TokenId> reference) {
  if (reference.empty()) throw InputError("rouge_l: empty reference");
  if (hypothesis.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hypothesis, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hypothesis.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

std::string ErrorRate::to_string() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%% (%d)", rate * 100.0, count);
  return buf;
}

ErrorRate error_rate_from_counts(int errors, int total) {
  if (total <= 0) throw InputError("error rate: no class-B references");
  if (errors < 0 || errors > total) throw InputError("error rate: invalid error count");
  return ErrorRate{static_cast<double>(errors) / total, errors, total};
}

ErrorRate biased_error_rate(std::span<const TokenSeq> predictions, std::span<const TokenSeq> references,
                            std::span<const TokenSeq> class_a_phrases, std::span<const TokenSeq> class_b_phrases) {
  if (predictions.size() != references.size()) throw InputError("biased_error_rate: size mismatch");
  auto mentions = [](const TokenSeq& s, std::span<const TokenSeq> phrases) {
    return std::any_of(phrases.begin(), phrases.end(), [&](const TokenSeq& p) { return contains_subsequence(s, p); });
  };
  int total = 0, errors = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (!mentions(references[i], class_b_phrases)) continue;
    ++total;
    if (mentions(predictions[i], class_a_phrases)) ++errors;
  }
  return error_rate_from_counts(errors, total);
}

TokenSeq strip_eos(std::span<const TokenId> tokens, TokenId eos) {
  TokenSeq out(tokens.begin(), tokens.end());
  while (!out.empty() && out.back() == eos) out.pop_back();
  return out;
}

}  // namespace cfcap::metrics
