// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <vector>

#include "cfcap/captioner/model.hpp"
#include "cfcap/scene.hpp"

namespace cfcap::explain {

using Region = std::vector<int>;  // row-major cell indices

inline constexpr int kNumNegatives = 4;

// One phrase of a caption, its own cells as the positive region and four
// same-size negative regions that avoid them.
struct RegionProbe {
  int sample_id = 0;
  int span_index = 0;
  EntitySpan span;
  Region positive;
  std::vector<Region> negatives;
  std::uint64_t seed = 0;

  void validate(int grid_cells) const;
  // Positive first, then the negatives in sampling order.
  std::vector<Region> regions() const;
};

// Same-size regions disjoint from `positive` and from each other's cell
// sets (no two identical). Contiguous rectangles are preferred; when fewer
// than `count` fit, the rest are arbitrary cell sets.
std::vector<Region> sample_negative_regions(int grid_height, int grid_width, const Region& positive,
                                            int count, Rng& rng);

RegionProbe make_probe(const SceneImage& image, const CaptionSample& caption, int span_index,
                       int sample_id, std::uint64_t seed);

// Negative log-likelihood of the span's tokens at their caption positions.
double phrase_loss(const captioner::CaptionModel& model, const SceneImage& image,
                   std::span<const TokenId> caption, const EntitySpan& span);

// Phrase loss with `region` masked minus phrase loss on the original image.
double region_contribution(const captioner::CaptionModel& model, const SceneImage& image,
                           std::span<const TokenId> caption, const EntitySpan& span, const Region& region);
double region_contribution(const captioner::ModelParams& params, const SceneImage& image,
                           std::span<const TokenId> caption, const EntitySpan& span, const Region& region);

struct RegionRanking {
  std::vector<int> order;              // indices into probe.regions(), best first
  std::vector<double> contributions;   // per region, positive first
  int positive_rank = 0;               // 1-based
  bool positive_strictly_top = false;  // ties count as failure
};

// Sorted by contribution, descending; equal contributions keep region order.
RegionRanking rank_regions(const captioner::CaptionModel& model, const RegionProbe& probe,
                           const SceneImage& image, std::span<const TokenId> caption);

struct ProbeRecord {
  RegionProbe probe;
  RegionRanking ranking;
};

struct ProbeReport {
  std::vector<ProbeRecord> probes;
  double accuracy = 0.0;

  nlohmann::ordered_json to_json() const;
};

// probes_per_sample probes on the factual image of every sample, spans drawn
// uniformly per probe.
ProbeReport run_probes(const captioner::CaptionModel& model, std::span<const CounterfactualSample> data,
                       int probes_per_sample, std::uint64_t seed);

double interpretability_accuracy(const captioner::CaptionModel& model,
                                 std::span<const CounterfactualSample> data, int probes_per_sample,
                                 std::uint64_t seed);
double interpretability_accuracy(const captioner::ModelParams& params,
                                 std::span<const CounterfactualSample> data, int probes_per_sample,
                                 std::uint64_t seed);

}  // namespace cfcap::explain
