#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <string_view>

#include "helpers.hpp"
#include "inmemo/image.hpp"
#include "inmemo/util.hpp"

using namespace inmemo;

TEST_SUITE("image") {
  TEST_CASE("halving averages 2x2 blocks") {
    std::mt19937_64 rng(1);
    const Image src = testing::random_image(rng, 64, 64);
    const Image dst = resize_bilinear(src, 32, 32);
    REQUIRE(dst.height == 32);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          const double block = (src.at(2 * r, 2 * c, ch) + src.at(2 * r, 2 * c + 1, ch) +
                                src.at(2 * r + 1, 2 * c, ch) + src.at(2 * r + 1, 2 * c + 1, ch)) /
                               4.0;
          CHECK(dst.at(r, c, ch) == doctest::Approx(block).epsilon(1e-14));
        }
  }

  TEST_CASE("same-size resize is the identity") {
    std::mt19937_64 rng(2);
    const Image src = testing::random_image(rng, 17, 23);
    CHECK(resize_bilinear(src, 17, 23) == src);
  }

  TEST_CASE("constant images stay constant under any resize") {
    const Image src(13, 29, 0.3);
    const Image up = resize_bilinear(src, 40, 7);
    for (double v : up.data) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  }

  TEST_CASE("resize adjoint satisfies the dot-product identity") {
    std::mt19937_64 rng(3);
    for (auto [sh, sw, dh, dw] : {std::array{64, 64, 32, 32}, std::array{20, 30, 47, 11}, std::array{9, 9, 32, 32}}) {
      const ResizePlan plan(sh, sw, dh, dw);
      const Image x = testing::random_image(rng, sh, sw, -1, 1);
      const Image y = testing::random_image(rng, dh, dw, -1, 1);
      const Image ax = plan.apply(x);
      Image aty(sh, sw);
      plan.accumulate_adjoint(y, aty);
      double lhs = 0, rhs = 0;
      for (std::size_t k = 0; k < ax.data.size(); ++k) lhs += ax.data[k] * y.data[k];
      for (std::size_t k = 0; k < x.data.size(); ++k) rhs += x.data[k] * aty.data[k];
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }

  TEST_CASE("quantize then png round trip is exact") {
    std::mt19937_64 rng(4);
    Image img = testing::random_image(rng, 12, 9, -0.2, 1.2);
    quantize_8bit(img);
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
    }
    Image again = img;
    quantize_8bit(again);
    CHECK(again == img);
    testing::TempDir dir("png");
    write_png(dir.path() / "a.png", img);
    CHECK(read_png(dir.path() / "a.png") == img);
  }

  TEST_CASE("reading a missing png throws") {
    CHECK_THROWS(read_png("/nonexistent/definitely_missing.png"));
  }

  TEST_CASE("luminance is the channel mean") {
    Image img(1, 2);
    img.at(0, 0, 0) = 0.3, img.at(0, 0, 1) = 0.6, img.at(0, 0, 2) = 0.9;
    img.at(0, 1, 0) = 1.0;
    const auto l = luminance(img);
    CHECK(l[0] == doctest::Approx(0.6));
    CHECK(l[1] == doctest::Approx(1.0 / 3.0));
  }
}

TEST_SUITE("util") {
  TEST_CASE("derived seeds are stable and label-separated") {
    CHECK(derive_seed(7, "a") == derive_seed(7, "a"));
    CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
    CHECK(derive_seed(7, "a") != derive_seed(8, "a"));
    CHECK(derive_seed(7, "a", 0) != derive_seed(7, "a", 1));
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(1, "x", i));
    CHECK(seen.size() == 1000);
  }

  TEST_CASE("parallel_for visits every index once") {
    for (int workers : {1, 2, 4}) {
      std::vector<std::atomic<int>> hits(257);
      parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
      for (auto& h : hits) CHECK(h.load() == 1);
    }
    parallel_for(0, 3, [](std::size_t) { FAIL("no work expected"); });
  }

  TEST_CASE("parallel_for rethrows worker exceptions") {
    CHECK_THROWS_AS(parallel_for(50, 3,
                                 [](std::size_t i) {
                                   if (i == 17) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
  }

  TEST_CASE("sha256 standard vector") {
    const std::string_view abc = "abc";
    CHECK(sha256_hex(std::as_bytes(std::span(abc.data(), abc.size()))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
