#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "inmemo/canvas.hpp"

using namespace inmemo;

TEST_SUITE("canvas") {
  TEST_CASE("cell-sized sources land at their quadrant offsets") {
    std::mt19937_64 rng(1);
    const int C = 32;
    const Image x = testing::random_image(rng, C, C), y = testing::random_image(rng, C, C),
                q = testing::random_image(rng, C, C);
    const Canvas cv = compose_canvas(x, y, q, C);
    REQUIRE(cv.pixels.height == 2 * C);
    REQUIRE(cv.cell == C);
    for (int r = 0; r < 2 * C; ++r)
      for (int c = 0; c < 2 * C; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          double expect;
          if (r < C && c < C) expect = x.at(r, c, ch);
          else if (r < C) expect = y.at(r, c - C, ch);
          else if (c < C) expect = q.at(r - C, c, ch);
          else expect = kEmptyCellFill[ch];
          CHECK(cv.pixels.at(r, c, ch) == expect);
        }
  }

  TEST_CASE("larger sources are resized into the cell") {
    std::mt19937_64 rng(2);
    const Image x = testing::random_image(rng, 64, 64);
    const Canvas cv = compose_canvas(x, x, x, 32);
    CHECK(extract_cell(cv, Quadrant::top_left) == resize_bilinear(x, 32, 32));
    CHECK(extract_cell(cv, Quadrant::bottom_left) == resize_bilinear(x, 32, 32));
  }

  TEST_CASE("ground-truth canvas carries the query label bottom-right") {
    std::mt19937_64 rng(3);
    const Image a = testing::random_image(rng, 16, 16), b = testing::random_image(rng, 16, 16),
                c = testing::random_image(rng, 16, 16), d = testing::random_image(rng, 16, 16);
    const Canvas gt = compose_gt_canvas(a, b, c, d, 16);
    CHECK(extract_cell(gt, Quadrant::top_left) == a);
    CHECK(extract_cell(gt, Quadrant::top_right) == b);
    CHECK(extract_cell(gt, Quadrant::bottom_left) == c);
    CHECK(extract_cell(gt, Quadrant::bottom_right) == d);
    const Canvas query = compose_canvas(a, b, c, 16);
    CHECK(extract_cell(query, Quadrant::top_left) == a);
    CHECK_FALSE(extract_cell(query, Quadrant::bottom_right) == d);
  }

  TEST_CASE("canvas adjoint satisfies the dot-product identity") {
    std::mt19937_64 rng(4);
    for (int src : {32, 64, 48}) {
      const Image x = testing::random_image(rng, src, src, -1, 1), y = testing::random_image(rng, src, src, -1, 1),
                  q = testing::random_image(rng, src, src, -1, 1);
      const Image g = testing::random_image(rng, 64, 64, -1, 1);
      const Image zero(src, src);
      const Canvas cv = compose_canvas(x, y, q, 32), c0 = compose_canvas(zero, zero, zero, 32);
      double lhs = 0;
      for (std::size_t k = 0; k < g.data.size(); ++k) lhs += (cv.pixels.data[k] - c0.pixels.data[k]) * g.data[k];
      const CellGradients adj = compose_canvas_adjoint(g, 32, src, src);
      double rhs = 0;
      for (std::size_t k = 0; k < x.data.size(); ++k)
        rhs += x.data[k] * adj.input.data[k] + y.data[k] * adj.label.data[k] + q.data[k] * adj.query.data[k];
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }

  TEST_CASE("masked positions are the bottom-right quadrant in row-major order") {
    const QuadrantMaskSpec m = masked_token_positions(16, 16);
    REQUIRE(m.size() == 64);
    int k = 0;
    for (int r = 8; r < 16; ++r)
      for (int c = 8; c < 16; ++c) {
        CHECK(m.positions[k] == TokenPos{r, c});
        ++k;
      }
    int contained = 0;
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) contained += m.contains(r, c);
    CHECK(contained == 64);
    CHECK_THROWS(masked_token_positions(15, 16));
    CHECK_THROWS(masked_token_positions(0, 0));
  }
}
