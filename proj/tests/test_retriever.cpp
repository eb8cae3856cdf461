#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "inmemo/retriever.hpp"

using namespace inmemo;

namespace {

// Straight-line reimplementation: 16x16 bilinear thumbnail, grey, unit norm.
std::vector<long double> oracle_feature(const Image& img) {
  const Image t = resize_bilinear(img, 16, 16);
  std::vector<long double> f;
  long double norm = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const long double g = (static_cast<long double>(t.at(r, c, 0)) + t.at(r, c, 1) + t.at(r, c, 2)) / 3;
      f.push_back(g);
      norm += g * g;
    }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& v : f) v /= norm;
  return f;
}

Dataset random_pool(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    TaskPair p;
    p.id = static_cast<std::uint32_t>(3 * i + 1);
    p.input = testing::random_image(rng, 64, 64);
    p.label = Image(64, 64);
    d.pairs.push_back(std::move(p));
  }
  return d;
}

}  // namespace

TEST_SUITE("retriever") {
  TEST_CASE("retrieve matches an exhaustive similarity scan") {
    const Dataset pool = random_pool(256, 1);
    const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
    std::vector<std::vector<long double>> feats;
    for (const TaskPair& p : pool.pairs) feats.push_back(oracle_feature(p.input));
    std::mt19937_64 rng(2);
    for (int q = 0; q < 200; ++q) {
      const Image query = testing::random_image(rng, 64, 64);
      const auto qf = oracle_feature(query);
      std::uint32_t best = 0;
      long double best_sim = -2;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        long double s = 0;
        for (std::size_t k = 0; k < qf.size(); ++k) s += qf[k] * feats[i][k];
        if (s > best_sim) best_sim = s, best = pool.pairs[i].id;
      }
      CHECK(retrieve(idx, query) == best);
    }
  }

  TEST_CASE("exclusion gives leave-one-out retrieval") {
    const Dataset pool = random_pool(40, 3);
    const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
    for (const TaskPair& p : pool.pairs) {
      CHECK(retrieve(idx, p.input) == p.id);
      CHECK(retrieve(idx, p.input, p.id) != p.id);
    }
  }

  TEST_CASE("ties resolve to the smallest id") {
    std::mt19937_64 rng(4);
    const Image img = testing::random_image(rng, 64, 64);
    Dataset d;
    for (std::uint32_t id : {9u, 4u, 7u}) {
      TaskPair p;
      p.id = id;
      p.input = img;
      d.pairs.push_back(p);
    }
    const RetrievalIndex idx = build_index(d, DownsampleExtractor());
    CHECK(retrieve(idx, img) == 4);
    CHECK(retrieve(idx, img, 4u) == 7);
  }

  TEST_CASE("features are unit norm and invariant to positive scaling") {
    std::mt19937_64 rng(5);
    const Image img = testing::random_image(rng, 64, 64, 0.0, 0.5);
    Image scaled = img;
    for (double& v : scaled.data) v *= 1.9;
    const FeatureVector a = extract_features(img), b = extract_features(scaled);
    CHECK(a.dot(a) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 0; k < a.values.size(); ++k) CHECK(a.values[k] == doctest::Approx(b.values[k]).epsilon(1e-12));
  }

  TEST_CASE("black images are flagged and only win as a last resort") {
    std::mt19937_64 rng(6);
    Dataset d;
    TaskPair black;
    black.id = 0;
    black.input = Image(64, 64, 0.0);
    TaskPair other;
    other.id = 1;
    other.input = testing::random_image(rng, 64, 64);
    d.pairs = {black, other};
    CHECK(extract_features(black.input).zero);
    const RetrievalIndex idx = build_index(d, DownsampleExtractor());
    CHECK(retrieve(idx, Image(64, 64, 0.0)) == 1);
    CHECK(retrieve(idx, other.input, 1u) == 0);
  }

  TEST_CASE("errors: empty support and extractor mismatch") {
    const Dataset pool = random_pool(1, 7);
    const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
    CHECK_THROWS(retrieve(idx, pool.pairs[0].input, pool.pairs[0].id));
    CHECK_THROWS(retrieve(idx, DownsampleExtractor(8), pool.pairs[0].input));
    CHECK_THROWS(RetrievalIndex("x", {{1, {}}, {1, {}}}));
  }

  TEST_CASE("index persistence round trip") {
    const Dataset pool = random_pool(12, 8);
    const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
    testing::TempDir dir("idx");
    idx.save(dir.path() / "i.bin");
    const RetrievalIndex back = RetrievalIndex::load(dir.path() / "i.bin");
    CHECK(back.extractor_tag() == idx.extractor_tag());
    CHECK(back.size() == idx.size());
    std::mt19937_64 rng(9);
    for (int q = 0; q < 20; ++q) {
      const Image query = testing::random_image(rng, 64, 64);
      CHECK(retrieve(back, query) == retrieve(idx, query));
    }
    CHECK_THROWS(RetrievalIndex::load(dir.path() / "missing.bin"));
  }
}
