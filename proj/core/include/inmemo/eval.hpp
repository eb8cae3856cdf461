#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "inmemo/backbone.hpp"
#include "inmemo/data_synth.hpp"
#include "inmemo/prompt.hpp"
#include "inmemo/retriever.hpp"
#include "inmemo/trainer.hpp"

namespace inmemo {

/// Binary mask, row-major, one byte (0 or 1) per pixel.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

inline constexpr double kBinarizeThreshold = 0.5;

/// Foreground where the channel-mean luminance is strictly above threshold.
Mask binarize(const Image& img, double threshold = kBinarizeThreshold);

/// Single-mask IoU; two empty masks score 1.
double iou(const Mask& pred, const Mask& gt);

struct ClassScore {
  long long intersection = 0;
  long long union_ = 0;
  int images = 0;
  double iou = 0;
};

struct MiouResult {
  std::map<int, ClassScore> per_class;
  double mean = 0;
};

/// Class-accumulated IoU: per class, summed intersections over summed unions
/// (1 when both sums are zero); the mean runs over classes.
MiouResult miou(std::span<const int> class_ids, std::span<const Mask> preds, std::span<const Mask> gts);

struct PredictionRecord {
  std::uint32_t query_id = 0;
  std::uint32_t context_id = 0;
  int class_id = 0;
  /// Decoded bottom-right cell.
  Image predicted;
  Mask mask;
  /// Binarized ground truth the mask was scored against.
  Mask truth;
  double iou = 0;
};

/// Ground-truth mask at the cell resolution the prediction is scored at.
Mask ground_truth_mask(const Image& label, int cell);

/// Retrieve, optionally prompt, compose, predict tokens, decode and cut out
/// the bottom-right cell. Without a prompt the images still pass through the
/// same resize to `resolution`.
Image predict_cell(const PromptTask& task, const Image& query, const PromptParams* prompt, const Placement& placement,
                   int resolution, std::uint32_t* context_id = nullptr,
                   std::optional<std::uint32_t> exclude = std::nullopt);

/// predict_cell on a labelled pair, plus its mask and IoU. A prompt, when
/// given, fixes the resolution.
PredictionRecord predict_label(const PromptTask& task, const TaskPair& query, const PromptParams* prompt,
                               const Placement& placement, int resolution = 64,
                               std::optional<std::uint32_t> exclude = std::nullopt);

/// Fraction of masked positions where E on the prompted canvas predicts the
/// tokenizer's token of the ground-truth canvas.
double token_agreement(const PromptTask& task, std::span<const TaskPair> queries, const PromptParams* prompt,
                       const Placement& placement, int resolution = 64, int workers = 0);
/// Same fraction for two token grids over a mask.
double token_agreement(const TokenGrid& predicted, const TokenGrid& truth, const QuadrantMaskSpec& mask);

/// One evaluated configuration: predictions over a query set and its scores.
struct ArmResult {
  std::string name;
  int fold = 0;
  MiouResult miou;
  double mean_image_iou = 0;
  std::string prompt_fingerprint;
  std::optional<TrainHistory> history;
  std::vector<PredictionRecord> predictions;
};

/// Evaluates every pair of `queries` against `task`. prompt == nullptr is the
/// baseline arm.
ArmResult evaluate_arm(const std::string& name, const PromptTask& task, const Dataset& queries,
                       const PromptParams* prompt, const Placement& placement, int resolution, int workers);

/// Re-aggregates an arm's mIoU from its prediction records alone.
MiouResult miou_from_records(std::span<const PredictionRecord> records);

nlohmann::json to_json(const TrainConfig& cfg);
/// Overrides fields of `base` present in `j`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct ExperimentConfig {
  TrainConfig train;
  /// Evaluation workers (0 = all cores).
  int workers = 0;
  /// Recorded in every report; not interpreted here.
  nlohmann::json dataset;
  /// Keep decoded predictions in the report (needed for PNG grids).
  bool keep_predictions = true;
  /// Hooks into every prompt training run; not serialized.
  const TrainObserver* observer = nullptr;

  nlohmann::json to_json() const;
};

using Cell = std::variant<std::int64_t, double, std::string>;

/// Tabular experiment output with provenance. Scores are fractions in [0, 1].
struct ExperimentReport {
  std::string kind;
  nlohmann::json config;
  std::string backbone_fingerprint;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  /// Headline number for the experiment (e.g. fold-mean mIoU of the trained arm).
  double aggregate = 0;
  /// Experiment-specific derived numbers (means, gains, matrix).
  nlohmann::json summary = nlohmann::json::object();
  std::vector<ArmResult> arms;

  int column(const std::string& name) const;
  /// Rows where `key_column` holds `key` (string cells only).
  std::vector<const std::vector<Cell>*> rows_where(const std::string& key_column, const std::string& key) const;

  std::string to_csv() const;
  /// Config, fingerprints, table, per-arm per-class scores and prediction ids.
  nlohmann::json to_json() const;
  /// Writes <stem>.json, <stem>.csv and, per arm, <stem>_<arm>_predictions.csv.
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

/// Check a report against the column set of its kind; returns problems found.
std::vector<std::string> validate_report(const ExperimentReport& report);

struct TrainedPrompt {
  TrainResult result;
  /// Retrieval pool and index the prompt was trained against.
  Dataset pool;
};

/// Splits `train_set` into train/validation, trains with leave-one-out
/// retrieval over the train part, selects on validation mIoU.
TrainedPrompt train_on(const Backbone& bb, const Dataset& train_set, const TrainConfig& cfg, int eval_workers,
                       const TrainObserver* observer = nullptr);

/// Baseline and trained-prompt arms for one fold: prompt trained on the fold's
/// training classes, test queries retrieve from the full training pool.
ExperimentReport run_fold_experiment(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg);
/// Baseline arm and, when a prompt is given, its arm, without training.
ExperimentReport evaluate_on_fold(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg,
                                  const PromptParams* prompt);
/// Per-fold runs merged into one report; aggregate is the fold-mean mIoU of
/// the trained arm.
ExperimentReport run_folds(std::span<const Fold> folds, const Backbone& bb, const ExperimentConfig& cfg);

/// Baseline plus one trained prompt per placement variant.
ExperimentReport ablate_placement(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg);

/// One trained prompt per pad width, with its trainable-parameter count.
ExperimentReport sweep_padding(const Fold& fold, std::span<const int> pads, const Backbone& bb,
                               const ExperimentConfig& cfg);

/// Images-per-class grid; 0 stands for "all".
inline const std::vector<int> kDatasetSizes{16, 32, 64, 128, 256, 0};

/// Trains on a seeded subsample of `size` pairs per training class.
Dataset subsample_per_class(const Dataset& d, int size, std::uint64_t seed);
ExperimentReport sweep_dataset_size(const Fold& fold, std::span<const int> sizes, const Backbone& bb,
                                    const ExperimentConfig& cfg);

/// Each class is split in half (seeded): the first half trains that class's
/// prompt and serves as its retrieval pool, the second half are its queries.
/// Cell (w, w') scores the prompt of w on the queries of w'.
ExperimentReport cross_class_matrix(const Dataset& data, std::span<const int> classes, const Backbone& bb,
                                    const ExperimentConfig& cfg);

/// Prompts are trained on `train_domain`; queries come from `query_domain` and
/// retrieve either from `train_domain` (in-domain) or `shifted_pool`.
ExperimentReport domain_shift(const Dataset& train_domain, const Dataset& shifted_pool, const Dataset& query_domain,
                              const Backbone& bb, const ExperimentConfig& cfg);

/// Comparison grid: one row per record, columns in-context input, in-context
/// label, query, baseline prediction, prompted prediction, ground truth. Cells
/// are `cell` pixels with a `gap`-pixel white border.
struct GridRow {
  const TaskPair* context = nullptr;
  const TaskPair* query = nullptr;
  const Image* baseline = nullptr;
  const Image* prompted = nullptr;
};
Image render_grid(std::span<const GridRow> rows, int cell = 32, int gap = 2);

}  // namespace inmemo
