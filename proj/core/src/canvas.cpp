#include "inmemo/canvas.hpp"

#include <stdexcept>

namespace inmemo {

namespace {

void blit(Image& dst, const Image& cell_img, int r0, int c0) {
  for (int r = 0; r < cell_img.height; ++r)
    for (int c = 0; c < cell_img.width; ++c)
      for (int ch = 0; ch < 3; ++ch) dst.at(r0 + r, c0 + c, ch) = cell_img.at(r, c, ch);
}

std::pair<int, int> origin(Quadrant q, int cell) {
  switch (q) {
    case Quadrant::top_left: return {0, 0};
    case Quadrant::top_right: return {0, cell};
    case Quadrant::bottom_left: return {cell, 0};
    case Quadrant::bottom_right: return {cell, cell};
  }
  return {0, 0};
}

Canvas assemble(const Image& tl, const Image& tr, const Image& bl, const Image* br, const Color& fill, int cell) {
  if (cell < 1) throw std::invalid_argument("compose_canvas: cell size must be >= 1");
  Canvas cv;
  cv.cell = cell;
  cv.pixels = Image(2 * cell, 2 * cell);
  blit(cv.pixels, resize_bilinear(tl, cell, cell), 0, 0);
  blit(cv.pixels, resize_bilinear(tr, cell, cell), 0, cell);
  blit(cv.pixels, resize_bilinear(bl, cell, cell), cell, 0);
  if (br) {
    blit(cv.pixels, resize_bilinear(*br, cell, cell), cell, cell);
  } else {
    for (int r = cell; r < 2 * cell; ++r)
      for (int c = cell; c < 2 * cell; ++c)
        for (int ch = 0; ch < 3; ++ch) cv.pixels.at(r, c, ch) = fill[ch];
  }
  return cv;
}

}  // namespace

Canvas compose_canvas(const Image& x, const Image& y, const Image& x_query, int cell, const Color& fill) {
  return assemble(x, y, x_query, nullptr, fill, cell);
}

Canvas compose_gt_canvas(const Image& x, const Image& y, const Image& x_query, const Image& y_query, int cell) {
  return assemble(x, y, x_query, &y_query, kEmptyCellFill, cell);
}

Image extract_cell(const Canvas& cv, Quadrant q) {
  if (cv.cell < 1 || cv.pixels.height != 2 * cv.cell || cv.pixels.width != 2 * cv.cell)
    throw std::invalid_argument("extract_cell: malformed canvas");
  const auto [r0, c0] = origin(q, cv.cell);
  Image out(cv.cell, cv.cell);
  for (int r = 0; r < cv.cell; ++r)
    for (int c = 0; c < cv.cell; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = cv.pixels.at(r0 + r, c0 + c, ch);
  return out;
}

CellGradients compose_canvas_adjoint(const Image& grad_canvas, int cell, int src_h, int src_w) {
  if (grad_canvas.height != 2 * cell || grad_canvas.width != 2 * cell)
    throw std::invalid_argument("compose_canvas_adjoint: gradient does not match canvas size");
  const ResizePlan plan(src_h, src_w, cell, cell);
  Canvas g{grad_canvas, cell};
  CellGradients out{Image(src_h, src_w), Image(src_h, src_w), Image(src_h, src_w)};
  plan.accumulate_adjoint(extract_cell(g, Quadrant::top_left), out.input);
  plan.accumulate_adjoint(extract_cell(g, Quadrant::top_right), out.label);
  plan.accumulate_adjoint(extract_cell(g, Quadrant::bottom_left), out.query);
  return out;
}

QuadrantMaskSpec masked_token_positions(int grid_rows, int grid_cols) {
  if (grid_rows < 2 || grid_cols < 2 || grid_rows % 2 != 0 || grid_cols % 2 != 0)
    throw std::invalid_argument("masked_token_positions: grid dimensions must be positive and even");
  QuadrantMaskSpec spec;
  spec.grid_rows = grid_rows;
  spec.grid_cols = grid_cols;
  for (int r = grid_rows / 2; r < grid_rows; ++r)
    for (int c = grid_cols / 2; c < grid_cols; ++c) spec.positions.push_back({r, c});
  return spec;
}

}  // namespace inmemo
