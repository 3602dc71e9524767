// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>

#include "cfcap/metrics/metrics.hpp"
#include "cfcap/metrics/report.hpp"
#include "support/fixtures.hpp"

using namespace cfcap;
using namespace cfcap::metrics;
using namespace cfcap::testing;

namespace {

using Gram = std::vector<TokenId>;

std::map<Gram, int> grams(const TokenSeq& s, int n) {
  std::map<Gram, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) ++out[Gram(s.begin() + i, s.begin() + i + n)];
  return out;
}

// Sentence BLEU-4 written from the textbook definition.
double naive_bleu(const TokenSeq& hyp, const std::vector<TokenSeq>& refs) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto h = grams(hyp, n);
    double match = 0.0, total = 0.0;
    for (const auto& [g, c] : h) {
      int best = 0;
      for (const auto& r : refs) {
        const auto rg = grams(r, n);
        const auto it = rg.find(g);
        if (it != rg.end()) best = std::max(best, it->second);
      }
      match += std::min(c, best);
      total += c;
    }
    // No n-grams of this order: the smoothed precision is 1e-9 / 1.
    if (total == 0) total = 1;
    log_sum += std::log(match > 0 ? match / total : 1e-9 / total) / 4.0;
  }
  std::size_t closest = refs.front().size();
  for (const auto& r : refs) {
    const long d = std::labs(static_cast<long>(r.size()) - static_cast<long>(hyp.size()));
    const long dc = std::labs(static_cast<long>(closest) - static_cast<long>(hyp.size()));
    if (d < dc || (d == dc && r.size() < closest)) closest = r.size();
  }
  const double bp = hyp.size() >= closest ? 1.0 : std::exp(1.0 - double(closest) / hyp.size());
  return bp * std::exp(log_sum);
}

// Longest common subsequence by enumerating subsets of the shorter side.
std::size_t brute_lcs(const TokenSeq& a, const TokenSeq& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    TokenSeq sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    std::size_t j = 0;
    for (TokenId t : b) {
      if (j < sub.size() && sub[j] == t) ++j;
    }
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("CHAIR_s") {
    const std::vector<MaskedCaption> caps{
        {{1, 5, 2, 1, 6, 0}, {5}},
        {{1, 7, 0}, {5}},
        {{1, 8, 9, 0}, {8, 9}},
        {{1, 9, 8, 0}, {8, 9}},
    };
    CHECK(chair_s(caps) == 0.5);
    CHECK(chair_s(std::span(caps).first(1)) == 1.0);
    CHECK(chair_s(std::span(caps).subspan(1, 1)) == 0.0);
    CHECK_THROWS_AS(chair_s(std::span<const MaskedCaption>{}), InputError);
  }

  TEST_CASE("ranking fixtures") {
    RankingJudgment j{{1, 0, 1, 1, 0}};
    CHECK(precision_at_k(j, 5) == doctest::Approx(0.6));
    const double expected = (1 + 1 / std::log2(4.0) + 1 / std::log2(5.0)) / (1 + 1 / std::log2(3.0) + 1 / std::log2(4.0));
    CHECK(ndcg_at_k(j, 5) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(ndcg_at_k(j, 5) - 0.9060) < 1e-4);

    RankingJudgment all{{1, 1, 1, 1, 1}};
    CHECK(precision_at_k(all, 5) == 1.0);
    CHECK(ndcg_at_k(all, 5) == doctest::Approx(1.0));
    RankingJudgment none{{0, 0, 0, 0, 0}};
    CHECK(precision_at_k(none, 5) == 0.0);
    CHECK(ndcg_at_k(none, 5) == 0.0);

    bool padded = false;
    RankingJudgment short_list{{1, 1}};
    CHECK(precision_at_k(short_list, 5, &padded) == doctest::Approx(0.4));
    CHECK(padded);
    CHECK(ndcg_at_k(short_list, 5) == doctest::Approx(1.0));

    CHECK_THROWS_AS(precision_at_k(RankingJudgment{{1, 2}}, 5), InputError);
    CHECK_THROWS_AS(precision_at_k(j, 0), InputError);
  }

  TEST_CASE("judgments from candidates") {
    const std::vector<TokenSeq> cands{{1, 5, 6, 0}, {1, 7, 0}, {1, 6, 5, 0}};
    const TokenSeq phrase{5, 6};
    CHECK(RankingJudgment::from_candidates(cands, phrase).relevance == std::vector<int>{0, 1, 1});
  }

  TEST_CASE("nDCG is at most 1 and perfect for sorted relevances") {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      RankingJudgment j;
      for (int k = 0; k < 5; ++k) j.relevance.push_back(static_cast<int>(rng.below(2)));
      const double v = ndcg_at_k(j, 5);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
      auto sorted = j;
      std::sort(sorted.relevance.rbegin(), sorted.relevance.rend());
      if (std::count(j.relevance.begin(), j.relevance.end(), 1) > 0) CHECK(ndcg_at_k(sorted, 5) == doctest::Approx(1.0));
    }
  }

  TEST_CASE("BLEU-4 and ROUGE-L hand fixtures") {
    const TokenSeq hyp{1, 2, 3, 4, 5}, ref{1, 2, 3, 4, 6};
    const std::vector<TokenSeq> refs{ref};
    CHECK(std::abs(bleu4(hyp, refs) - std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25)) < 1e-12);
    CHECK(std::abs(bleu4(hyp, refs) - 0.6687) < 1e-4);
    CHECK(lcs_length(hyp, ref) == 4);
    CHECK(rouge_l(hyp, ref) == doctest::Approx(0.8));

    const std::vector<TokenSeq> self{hyp};
    CHECK(bleu4(hyp, self) == doctest::Approx(1.0));
    CHECK(rouge_l(hyp, hyp) == doctest::Approx(1.0));
    CHECK(bleu4(TokenSeq{}, refs) == 0.0);
    CHECK(rouge_l(TokenSeq{}, ref) == 0.0);
    CHECK_THROWS_AS(rouge_l(hyp, TokenSeq{}), InputError);
  }

  TEST_CASE("BLEU-4 and LCS match naive implementations on random fixtures") {
    Rng rng(12);
    for (int i = 0; i < 50; ++i) {
      const TokenSeq hyp = random_tokens(static_cast<int>(rng.between(1, 9)), 4, rng);
      std::vector<TokenSeq> refs;
      const int nref = static_cast<int>(rng.between(1, 3));
      for (int r = 0; r < nref; ++r) refs.push_back(random_tokens(static_cast<int>(rng.between(1, 9)), 4, rng));
      CHECK(bleu4(hyp, refs) == doctest::Approx(naive_bleu(hyp, refs)).epsilon(1e-12));
      CHECK(lcs_length(hyp, refs[0]) == brute_lcs(hyp, refs[0]));
      const double l = static_cast<double>(brute_lcs(hyp, refs[0]));
      const double expect = l == 0 ? 0.0 : 2 * (l / hyp.size()) * (l / refs[0].size()) / (l / hyp.size() + l / refs[0].size());
      CHECK(rouge_l(hyp, refs[0]) == doctest::Approx(expect));
    }
  }

  TEST_CASE("corpus BLEU pools statistics") {
    const std::vector<TokenSeq> hyps{{1, 2, 3, 4, 5}, {2, 3, 4, 5, 6, 7}};
    const std::vector<std::vector<TokenSeq>> refs{{{1, 2, 3, 4, 6}}, {{2, 3, 4, 5, 6, 7}}};
    BleuStats s = bleu_stats(hyps[0], refs[0]);
    s += bleu_stats(hyps[1], refs[1]);
    CHECK(s.matches[0] == 10);
    CHECK(s.totals[3] == 5);
    CHECK(corpus_bleu4(hyps, refs) == doctest::Approx(bleu4_from_stats(s)));
    const double expected = std::pow((10.0 / 11) * (8.0 / 9) * (6.0 / 7) * (4.0 / 5), 0.25);
    CHECK(corpus_bleu4(hyps, refs) == doctest::Approx(expected));
  }

  TEST_CASE("brevity penalty") {
    const TokenSeq hyp{1, 2, 3, 4};
    const std::vector<TokenSeq> refs{{1, 2, 3, 4, 5, 6, 7, 8}};
    CHECK(bleu4(hyp, refs) == doctest::Approx(std::exp(1.0 - 2.0)));
  }

  TEST_CASE("error rates") {
    const auto r = error_rate_from_counts(283, 2034);
    CHECK(r.to_string() == "13.91% (283)");
    CHECK(r.count == 283);
    CHECK(r.total == 2034);
    CHECK(r.rate == 283.0 / 2034.0);
    CHECK(error_rate_from_counts(0, 10).to_string() == "0.00% (0)");
    CHECK(error_rate_from_counts(10, 20).to_string() == "50.00% (10)");
    CHECK_THROWS_AS(error_rate_from_counts(1, 0), InputError);

    const std::vector<TokenSeq> a{{4}}, b{{5}};
    const std::vector<TokenSeq> refs{{1, 5, 0}, {1, 5, 0}, {1, 4, 0}, {1, 6, 0}};
    const std::vector<TokenSeq> preds{{1, 4, 0}, {1, 5, 0}, {1, 5, 0}, {1, 4, 0}};
    const auto e = biased_error_rate(preds, refs, a, b);
    CHECK(e.count == 1);
    CHECK(e.total == 2);
    CHECK(e.rate == 0.5);
    CHECK_THROWS_AS(biased_error_rate(std::span(preds).first(3), refs, a, b), InputError);
    const std::vector<TokenSeq> no_b{{1, 4, 0}};
    CHECK_THROWS_AS(biased_error_rate(std::span(preds).first(1), no_b, a, b), InputError);
  }

  TEST_CASE("strip_eos") {
    CHECK(strip_eos(TokenSeq{1, 2, 0}, 0) == TokenSeq{1, 2});
    CHECK(strip_eos(TokenSeq{1, 2}, 0) == TokenSeq{1, 2});
    CHECK(strip_eos(TokenSeq{0}, 0).empty());
  }

  TEST_CASE("report json and table") {
    MetricsReport r;
    r.chair_s = 0.25;
    r.p_at_5 = 0.6;
    r.ndcg_at_5 = 0.9;
    r.bleu4 = 0.5;
    r.rouge_l = 0.7;
    r.biased_error = error_rate_from_counts(283, 2034);
    r.interpretability_accuracy = 0.4;
    r.num_images = 10;
    const auto j = r.to_json();
    for (const char* k : {"chair_s", "p_at_5", "ndcg_at_5", "bleu4", "rouge_l", "biased_error_rate",
                          "interpretability_accuracy", "num_images"}) {
      CHECK(j.contains(k));
    }
    CHECK(j.at("biased_error_rate").at("text") == "13.91% (283)");
    CHECK(MetricsReport::from_json(j).to_json() == j);
    const std::vector<ReportRow> rows{{"baseline", j}, {"NDE", j}};
    const auto table = render_table(rows);
    CHECK(table.find("NDE") != std::string::npos);
    CHECK(table.find("13.91% (283)") != std::string::npos);
  }
}
