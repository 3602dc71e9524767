// SPDX-License-Identifier: Apache-2.0
#include "cfcap/explain/explain.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace cfcap::explain {

using captioner::CaptionModel;
using nlohmann::ordered_json;

void RegionProbe::validate(int grid_cells) const {
  auto check = [&](const Region& r, const char* what) {
    if (r.empty()) throw InputError(std::string("region probe: empty ") + what);
    for (int c : r) {
      if (c < 0 || c >= grid_cells) throw InputError(std::string("region probe: ") + what + " outside the grid");
    }
    if (std::set<int>(r.begin(), r.end()).size() != r.size()) {
      throw InputError(std::string("region probe: duplicate cell in ") + what);
    }
  };
  check(positive, "positive region");
  if (static_cast<int>(negatives.size()) != kNumNegatives) {
    throw InputError("region probe: expected exactly 4 negative regions");
  }
  const std::set<int> pos(positive.begin(), positive.end());
  for (const auto& n : negatives) {
    check(n, "negative region");
    if (n.size() != positive.size()) throw InputError("region probe: negative region size differs");
    for (int c : n) {
      if (pos.count(c)) throw InputError("region probe: negative region overlaps the positive");
    }
  }
}

std::vector<Region> RegionProbe::regions() const {
  std::vector<Region> out{positive};
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

std::vector<Region> sample_negative_regions(int grid_height, int grid_width, const Region& positive, int count,
                                            Rng& rng) {
  const int n = static_cast<int>(positive.size());
  const int cells = grid_height * grid_width;
  if (n == 0) throw InputError("negative sampling: empty positive region");
  const std::set<int> pos(positive.begin(), positive.end());
  const int free_cells = cells - static_cast<int>(pos.size());
  if (free_cells < n) throw InputError("negative sampling: grid too small for disjoint negatives");

  std::set<Region> seen;
  std::vector<Region> rects;
  for (int h = 1; h <= grid_height; ++h) {
    if (n % h != 0 || n / h > grid_width) continue;
    const int w = n / h;
    for (int r0 = 0; r0 + h <= grid_height; ++r0) {
      for (int c0 = 0; c0 + w <= grid_width; ++c0) {
        Region rect;
        bool ok = true;
        for (int row = r0; row < r0 + h && ok; ++row) {
          for (int col = c0; col < c0 + w; ++col) {
            const int idx = row * grid_width + col;
            if (pos.count(idx)) {
              ok = false;
              break;
            }
            rect.push_back(idx);
          }
        }
        if (ok && seen.insert(rect).second) rects.push_back(std::move(rect));
      }
    }
  }
  rng.shuffle(rects);
  std::vector<Region> out;
  for (auto& r : rects) {
    if (static_cast<int>(out.size()) == count) break;
    out.push_back(std::move(r));
  }

  std::vector<int> pool;
  for (int c = 0; c < cells; ++c) {
    if (!pos.count(c)) pool.push_back(c);
  }
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 10000) throw InputError("negative sampling: not enough distinct regions");
    std::vector<int> p = pool;
    rng.shuffle(p);
    Region r(p.begin(), p.begin() + n);
    std::sort(r.begin(), r.end());
    if (seen.insert(r).second) out.push_back(std::move(r));
  }
  return out;
}

RegionProbe make_probe(const SceneImage& image, const CaptionSample& caption, int span_index, int sample_id,
                       std::uint64_t seed) {
  if (span_index < 0 || span_index >= static_cast<int>(caption.spans.size())) {
    throw InputError("make_probe: span index out of range");
  }
  RegionProbe p;
  p.sample_id = sample_id;
  p.span_index = span_index;
  p.span = caption.spans[span_index];
  p.positive = p.span.cells;
  p.seed = seed;
  Rng rng(seed);
  p.negatives = sample_negative_regions(image.height(), image.width(), p.positive, kNumNegatives, rng);
  return p;
}

double phrase_loss(const CaptionModel& model, const SceneImage& image, std::span<const TokenId> caption,
                   const EntitySpan& span) {
  if (span.length <= 0 || span.start < 0 || span.start + span.length > static_cast<int>(caption.size())) {
    throw InputError("phrase_loss: span outside the caption");
  }
  const auto rows = model.log_prob_rows(image, caption.first(span.start + span.length - 1));
  double loss = 0.0;
  for (int j = 0; j < span.length; ++j) loss -= rows(span.start + j, caption[span.start + j]);
  return loss;
}

double region_contribution(const CaptionModel& model, const SceneImage& image, std::span<const TokenId> caption,
                           const EntitySpan& span, const Region& region) {
  if (region.empty()) throw InputError("region_contribution: empty region");
  for (int c : region) {
    if (c < 0 || c >= image.size()) throw InputError("region_contribution: region outside the grid");
  }
  const SceneImage masked = image.masked(region);
  return phrase_loss(model, masked, caption, span) - phrase_loss(model, image, caption, span);
}

double region_contribution(const captioner::ModelParams& params, const SceneImage& image,
                           std::span<const TokenId> caption, const EntitySpan& span, const Region& region) {
  return region_contribution(captioner::NeuralCaptioner(params), image, caption, span, region);
}

RegionRanking rank_regions(const CaptionModel& model, const RegionProbe& probe, const SceneImage& image,
                           std::span<const TokenId> caption) {
  probe.validate(image.size());
  const auto regions = probe.regions();
  RegionRanking r;
  // The unmasked loss is shared by every region.
  const double base = phrase_loss(model, image, caption, probe.span);
  for (const auto& region : regions) {
    r.contributions.push_back(phrase_loss(model, image.masked(region), caption, probe.span) - base);
  }
  r.order.resize(regions.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return r.contributions[a] > r.contributions[b]; });
  r.positive_rank = static_cast<int>(std::find(r.order.begin(), r.order.end(), 0) - r.order.begin()) + 1;
  r.positive_strictly_top = std::all_of(r.contributions.begin() + 1, r.contributions.end(),
                                        [&](double c) { return r.contributions[0] > c; });
  return r;
}

ordered_json ProbeReport::to_json() const {
  ordered_json records = ordered_json::array();
  for (const auto& p : probes) {
    records.push_back(ordered_json{{"sample_id", p.probe.sample_id},
                                   {"span_index", p.probe.span_index},
                                   {"span", {{"p", p.probe.span.start}, {"len", p.probe.span.length}}},
                                   {"contributions", p.ranking.contributions},
                                   {"positive_rank", p.ranking.positive_rank},
                                   {"success", p.ranking.positive_strictly_top}});
  }
  return ordered_json{{"accuracy", accuracy}, {"num_probes", probes.size()}, {"probes", records}};
}

ProbeReport run_probes(const CaptionModel& model, std::span<const CounterfactualSample> data,
                       int probes_per_sample, std::uint64_t seed) {
  if (data.empty()) throw InputError("interpretability: empty dataset");
  if (probes_per_sample < 1) throw InputError("interpretability: probes_per_sample must be >= 1");
  ProbeReport report;
  int hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const int nspans = static_cast<int>(s.factual_caption.spans.size());
    if (nspans == 0) throw InputError("interpretability: sample without entity spans");
    for (int k = 0; k < probes_per_sample; ++k) {
      const std::uint64_t probe_seed = splitmix64(seed ^ splitmix64(i * 1315423911ULL + k));
      Rng pick(probe_seed);
      const int span = static_cast<int>(pick.below(nspans));
      ProbeRecord rec;
      rec.probe = make_probe(s.factual_image, s.factual_caption, span, static_cast<int>(i), pick.next_u64());
      rec.ranking = rank_regions(model, rec.probe, s.factual_image, s.factual_caption.tokens);
      if (rec.ranking.positive_strictly_top) ++hits;
      report.probes.push_back(std::move(rec));
    }
  }
  report.accuracy = static_cast<double>(hits) / static_cast<double>(report.probes.size());
  return report;
}

double interpretability_accuracy(const CaptionModel& model, std::span<const CounterfactualSample> data,
                                 int probes_per_sample, std::uint64_t seed) {
  return run_probes(model, data, probes_per_sample, seed).accuracy;
}

double interpretability_accuracy(const captioner::ModelParams& params, std::span<const CounterfactualSample> data,
                                 int probes_per_sample, std::uint64_t seed) {
  return interpretability_accuracy(captioner::NeuralCaptioner(params), data, probes_per_sample, seed);
}

}  // namespace cfcap::explain
