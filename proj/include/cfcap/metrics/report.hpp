// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "cfcap/metrics/metrics.hpp"

namespace cfcap::metrics {

// Evaluation summary of one model. Hallucination metrics come from the
// counterfactual test images, text quality from the factual ones.
struct MetricsReport {
  double chair_s = 0.0;
  double p_at_5 = 0.0;
  double ndcg_at_5 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  std::optional<ErrorRate> biased_error;          // on counterfactual images
  std::optional<ErrorRate> biased_error_factual;  // on factual images
  std::optional<double> interpretability_accuracy;
  int num_images = 0;
  int short_candidate_lists = 0;

  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

using ReportRow = std::pair<std::string, nlohmann::ordered_json>;

// Method rows by metric columns, rendered from the machine-readable reports.
// Columns absent from every row are omitted.
std::string render_table(std::span<const ReportRow> rows);

}  // namespace cfcap::metrics
