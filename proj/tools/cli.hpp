#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "inmemo/backbone.hpp"
#include "inmemo/data_synth.hpp"
#include "inmemo/trainer.hpp"

namespace inmemo::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct DataConfig {
  std::vector<int> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int per_class_count = 64;
  int image_size = 64;
  int domain_id = 0;
  TaskKind task = TaskKind::segmentation;
  int folds = 2;
  /// Detection only: drop pairs whose box covers at least this fraction.
  std::optional<double> max_box_fraction;
  std::uint32_t id_offset = 0;
};

/// Everything a subcommand may read. File values are overridden by flags.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 0;
  DataConfig data;
  PretrainConfig pretrain;
  TrainConfig train;

  nlohmann::json to_json() const;
  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static RunConfig from_json(const nlohmann::json& j);
};

/// Entry point shared by the executable and the tests. Returns an exit code
/// and never throws.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace inmemo::cli
