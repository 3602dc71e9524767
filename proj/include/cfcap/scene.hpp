// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "cfcap/common.hpp"

namespace cfcap {

// A grid of cell identifiers standing in for an image. Cells hold either
// kBackgroundCell, kMaskCell or an object id >= kFirstObjectCell.
class SceneImage {
 public:
  SceneImage() = default;
  SceneImage(int height, int width, std::vector<CellId> cells);
  static SceneImage blank(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  int size() const { return height_ * width_; }
  CellId at(int index) const { return cells_.at(index); }
  CellId at(int row, int col) const { return cells_.at(row * width_ + col); }
  void set(int index, CellId id) { cells_.at(index) = id; }
  const std::vector<CellId>& cells() const { return cells_; }

  // Throws InputError unless every cell is background, mask or an object id
  // below `num_cell_ids`.
  void validate(int num_cell_ids) const;

  // Copy with `region` replaced by kMaskCell.
  SceneImage masked(std::span<const int> region) const;

  bool operator==(const SceneImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<CellId> cells_;
};

// One entity phrase inside a caption, tied to the grid cells it describes.
struct EntitySpan {
  int start = 0;  // index of the first phrase token in the caption
  int length = 0;
  std::vector<int> cells;  // row-major cell indices

  bool operator==(const EntitySpan&) const = default;
};

struct CaptionSample {
  TokenSeq tokens;
  std::vector<EntitySpan> spans;

  std::span<const TokenId> phrase(const EntitySpan& span) const {
    return std::span<const TokenId>(tokens).subspan(span.start, span.length);
  }

  // Span bounds, non-empty cell lists inside the grid, no overlapping
  // spans, no duplicate surface forms.
  void validate(int grid_cells) const;

  bool operator==(const CaptionSample&) const = default;
};

// The tuple (I, S, target entity, I*, S*).
struct CounterfactualSample {
  SceneImage factual_image;
  CaptionSample factual_caption;
  int target_span = 0;
  SceneImage cf_image;
  TokenSeq cf_caption;

  const EntitySpan& target() const {
    return factual_caption.spans.at(target_span);
  }
  std::span<const TokenId> target_tokens() const {
    return factual_caption.phrase(target());
  }

  // Checks the span index, that cf_image differs from factual_image only by
  // masked target cells, and that cf_caption is non-empty with `eos` at
  // most as its last token (a decode may stop at the length limit).
  void validate(TokenId eos) const;
};

}  // namespace cfcap
