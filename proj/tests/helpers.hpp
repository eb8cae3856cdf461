#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "inmemo/backbone.hpp"
#include "inmemo/data_synth.hpp"
#include "inmemo/image.hpp"

namespace testing {

// Untrained but deterministic backbone; enough for wiring and gradient tests.
inline inmemo::ToyBackbone random_backbone(std::uint64_t seed = 11) {
  inmemo::BackboneConfig cfg;
  inmemo::TokenizerNet tok(cfg);
  tok.init(seed);
  inmemo::PredictorNet pred(cfg);
  pred.init(seed + 1);
  return inmemo::ToyBackbone(std::move(tok), std::move(pred));
}

inline inmemo::Dataset small_dataset(std::vector<int> classes, int per_class, std::uint64_t seed = 5,
                                     inmemo::TaskKind kind = inmemo::TaskKind::segmentation, int domain = 0,
                                     std::uint32_t id_offset = 0) {
  inmemo::DatasetSpec spec;
  spec.classes = std::move(classes);
  spec.per_class_count = per_class;
  spec.seed = seed;
  spec.task_kind = kind;
  spec.domain_id = domain;
  spec.id_offset = id_offset;
  return inmemo::generate_dataset(spec);
}

inline inmemo::Image random_image(std::mt19937_64& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  inmemo::Image img(h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("inmemo_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
