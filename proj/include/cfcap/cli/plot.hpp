// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>

namespace cfcap::cli {

struct SweepRow {
  std::string variant;
  double alpha = 0.0;
  double chair_s = 0.0;
  double bleu4 = 0.0;
};

// Two panels (CHAIR_s and BLEU-4 against alpha), one line per variant. The
// x axis is -log10(1 - alpha), with alpha = 1 drawn one step past the
// largest finite value.
std::string sweep_svg(std::span<const SweepRow> rows);
void write_sweep_svg(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace cfcap::cli
