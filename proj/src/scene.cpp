// SPDX-License-Identifier: Apache-2.0
#include "cfcap/scene.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace cfcap {

SceneImage::SceneImage(int height, int width, std::vector<CellId> cells)
    : height_(height), width_(width), cells_(std::move(cells)) {
  if (height <= 0 || width <= 0) {
    throw InputError("SceneImage: grid dimensions must be positive");
  }
  if (cells_.size() != static_cast<std::size_t>(height) * width) {
    throw InputError("SceneImage: cell count does not match " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

SceneImage SceneImage::blank(int height, int width) {
  return SceneImage(height, width,
                    std::vector<CellId>(static_cast<std::size_t>(height) * width,
                                        kBackgroundCell));
}

void SceneImage::validate(int num_cell_ids) const {
  for (CellId c : cells_) {
    if (c < 0 || c >= num_cell_ids) {
      throw InputError("SceneImage: invalid cell id " + std::to_string(c));
    }
  }
}

SceneImage SceneImage::masked(std::span<const int> region) const {
  SceneImage out = *this;
  for (int idx : region) {
    if (idx < 0 || idx >= size()) {
      throw InputError("SceneImage::masked: cell " + std::to_string(idx) +
                       " outside the grid");
    }
    out.cells_[idx] = kMaskCell;
  }
  return out;
}

void CaptionSample::validate(int grid_cells) const {
  const int len = static_cast<int>(tokens.size());
  std::vector<char> covered(tokens.size(), 0);
  std::set<TokenSeq> surfaces;
  for (const auto& span : spans) {
    if (span.start < 0 || span.length <= 0 || span.start + span.length > len) {
      throw InputError("CaptionSample: span out of bounds");
    }
    if (span.cells.empty()) {
      throw InputError("CaptionSample: span has no cells");
    }
    for (int c : span.cells) {
      if (c < 0 || c >= grid_cells) {
        throw InputError("CaptionSample: span cell outside the grid");
      }
    }
    for (int i = span.start; i < span.start + span.length; ++i) {
      if (covered[i]) throw InputError("CaptionSample: overlapping spans");
      covered[i] = 1;
    }
    auto p = phrase(span);
    if (!surfaces.insert(TokenSeq(p.begin(), p.end())).second) {
      throw InputError("CaptionSample: duplicate entity surface form");
    }
  }
}

void CounterfactualSample::validate(TokenId eos) const {
  if (target_span < 0 ||
      target_span >= static_cast<int>(factual_caption.spans.size())) {
    throw InputError("CounterfactualSample: target span index out of range");
  }
  if (cf_image.height() != factual_image.height() ||
      cf_image.width() != factual_image.width()) {
    throw InputError("CounterfactualSample: image shapes differ");
  }
  const auto& cells = target().cells;
  for (int i = 0; i < factual_image.size(); ++i) {
    const bool in_region = std::find(cells.begin(), cells.end(), i) != cells.end();
    // Inside the region a cell is masked or, for the null intervention,
    // left unchanged.
    const bool ok = cf_image.at(i) == factual_image.at(i) ||
                    (in_region && cf_image.at(i) == kMaskCell);
    if (!ok) throw InputError("CounterfactualSample: cf_image is not the target mask");
  }
  if (cf_caption.empty()) throw InputError("CounterfactualSample: empty cf_caption");
  for (std::size_t i = 0; i + 1 < cf_caption.size(); ++i) {
    if (cf_caption[i] == eos) throw InputError("CounterfactualSample: eos inside cf_caption");
  }
}

}  // namespace cfcap
