// SPDX-License-Identifier: Apache-2.0
#include "cfcap/metrics/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <vector>

namespace cfcap::metrics {

using nlohmann::ordered_json;

namespace {

ordered_json error_json(const ErrorRate& e) {
  return ordered_json{{"rate", e.rate}, {"count", e.count}, {"total", e.total}, {"text", e.to_string()}};
}

ErrorRate error_from_json(const nlohmann::json& j) {
  return ErrorRate{j.at("rate").get<double>(), j.at("count").get<int>(), j.at("total").get<int>()};
}

}  // namespace

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["chair_s"] = chair_s;
  j["p_at_5"] = p_at_5;
  j["ndcg_at_5"] = ndcg_at_5;
  j["bleu4"] = bleu4;
  j["rouge_l"] = rouge_l;
  if (biased_error) j["biased_error_rate"] = error_json(*biased_error);
  if (biased_error_factual) j["biased_error_rate_factual"] = error_json(*biased_error_factual);
  if (interpretability_accuracy) j["interpretability_accuracy"] = *interpretability_accuracy;
  j["num_images"] = num_images;
  j["short_candidate_lists"] = short_candidate_lists;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.chair_s = j.at("chair_s").get<double>();
    r.p_at_5 = j.at("p_at_5").get<double>();
    r.ndcg_at_5 = j.at("ndcg_at_5").get<double>();
    r.bleu4 = j.at("bleu4").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    if (j.contains("biased_error_rate")) r.biased_error = error_from_json(j.at("biased_error_rate"));
    if (j.contains("biased_error_rate_factual")) {
      r.biased_error_factual = error_from_json(j.at("biased_error_rate_factual"));
    }
    if (j.contains("interpretability_accuracy")) {
      r.interpretability_accuracy = j.at("interpretability_accuracy").get<double>();
    }
    r.num_images = j.value("num_images", 0);
    r.short_candidate_lists = j.value("short_candidate_lists", 0);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string render_table(std::span<const ReportRow> rows) {
  struct Column {
    const char* key;
    const char* header;
  };
  static const Column kColumns[] = {
      {"chair_s", "CHAIR_s"},       {"p_at_5", "P@5"},
      {"ndcg_at_5", "nDCG@5"},      {"bleu4", "BLEU-4"},
      {"rouge_l", "ROUGE-L"},       {"biased_error_rate", "Err(cf)"},
      {"biased_error_rate_factual", "Err(factual)"}, {"interpretability_accuracy", "Interp.Acc"},
  };
  std::vector<Column> cols;
  for (const auto& c : kColumns) {
    if (std::any_of(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.second.contains(c.key); })) {
      cols.push_back(c);
    }
  }
  auto cell = [](const ordered_json& report, const char* key) -> std::string {
    if (!report.contains(key)) return "-";
    const auto& v = report.at(key);
    if (v.is_object()) return v.at("text").get<std::string>();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
    return buf;
  };
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Method"};
  for (const auto& c : cols) header.push_back(c.header);
  grid.push_back(header);
  for (const auto& [name, report] : rows) {
    std::vector<std::string> line{name};
    for (const auto& c : cols) line.push_back(cell(report, c.key));
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (i > 0) out << " | ";
      out << grid[r][i] << std::string(width[i] - grid[r][i].size(), ' ');
    }
    out << '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) {
        if (i > 0) out << "-+-";
        out << std::string(width[i], '-');
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace cfcap::metrics
