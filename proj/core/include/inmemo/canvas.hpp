#pragma once

#include <array>
#include <vector>

#include "inmemo/image.hpp"

namespace inmemo {

enum class Quadrant { top_left, top_right, bottom_left, bottom_right };

using Color = std::array<double, 3>;

inline constexpr Color kEmptyCellFill{0.5, 0.5, 0.5};

/// 2C x 2C image holding four C x C cells with no separators:
/// in-context input | in-context label
/// query            | prediction (empty or ground truth)
struct Canvas {
  Image pixels;
  int cell = 0;

  bool operator==(const Canvas&) const = default;
};

/// Query canvas (x', y', x_q, empty). Each image is bilinearly resized to the
/// cell size; the bottom-right cell is filled with `fill`.
Canvas compose_canvas(const Image& x, const Image& y, const Image& x_query, int cell, const Color& fill = kEmptyCellFill);

/// Ground-truth canvas (x, y, x_q, y_q).
Canvas compose_gt_canvas(const Image& x, const Image& y, const Image& x_query, const Image& y_query, int cell);

Image extract_cell(const Canvas& cv, Quadrant q);

/// Gradients of a scalar with respect to the three source images of
/// compose_canvas, given its gradient with respect to the canvas pixels.
/// Sources keep their own resolutions (the adjoint of each resize is applied).
struct CellGradients {
  Image input;
  Image label;
  Image query;
};
CellGradients compose_canvas_adjoint(const Image& grad_canvas, int cell, int src_h, int src_w);

struct TokenPos {
  int row;
  int col;
  bool operator==(const TokenPos&) const = default;
  auto operator<=>(const TokenPos&) const = default;
};

/// Token positions of the bottom-right quadrant of a token grid.
struct QuadrantMaskSpec {
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<TokenPos> positions;

  bool contains(int row, int col) const { return row >= grid_rows / 2 && col >= grid_cols / 2; }
  std::size_t size() const { return positions.size(); }
};

/// Positions with row >= rows/2 and col >= cols/2, row-major.
QuadrantMaskSpec masked_token_positions(int grid_rows, int grid_cols);

}  // namespace inmemo
