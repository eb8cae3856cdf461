#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "inmemo/backbone.hpp"
#include "inmemo/canvas.hpp"
#include "inmemo/data_synth.hpp"
#include "inmemo/nn.hpp"
#include "inmemo/prompt.hpp"
#include "inmemo/retriever.hpp"

namespace inmemo {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.1;
  /// Cosine annealing with warm restarts, in epochs.
  int restart_period = 10;
  int restart_multiplier = 2;
  double min_learning_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Placement placement = Placement::canonical();
  double delta = 1.0;
  int resolution = 64;
  int pad = 8;
  InitScheme init = InitScheme::zeros;
  double init_sigma = 0.02;
  std::uint64_t seed = 0;
  /// Fraction of the training set held out for checkpoint selection.
  double val_fraction = 0.1;
  int workers = 0;

  void validate() const;
};

/// Learning rate at fractional epoch `t`.
double cosine_warm_restarts(const TrainConfig& cfg, double t);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<double> val_miou;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::optional<double> initial_val_miou;
  /// 0 means the initial prompt was kept.
  int best_epoch = 0;

  /// epoch,loss,val_mIoU rows; wall-clock stays out so reruns are byte-identical.
  std::string to_csv() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

/// Mean over masked positions of -log softmax(logits)[gt]. Positions outside
/// the mask contribute nothing.
double compute_loss(const LogitsGrid& logits, const TokenGrid& gt, const QuadrantMaskSpec& mask);
/// Same loss; writes dLoss/dLogits (scaled by `weight`) into grad.
double compute_loss_grad(const LogitsGrid& logits, const TokenGrid& gt, const QuadrantMaskSpec& mask,
                         LogitsGrid& grad, double weight = 1.0);

/// Everything a prompt-training step reads: the frozen backbone, the pool the
/// in-context pairs come from and its retrieval index.
struct PromptTask {
  const Backbone& backbone;
  const Dataset& pool;
  const RetrievalIndex& index;
  const FeatureExtractor& extractor;
};

/// One query prepared for the loss: its retrieved in-context pair and the
/// ground-truth tokens of the full canvas.
/// Pointers refer into datasets that must outlive the prepared query.
struct PreparedQuery {
  const TaskPair* query = nullptr;
  const TaskPair* context = nullptr;
  TokenGrid gt_tokens;
};

/// `exclude_self` gives leave-one-out retrieval (the query is in the pool).
PreparedQuery prepare_query(const PromptTask& task, const TaskPair& query, int resolution, bool exclude_self);

/// Canvas fed to E for a query: images resized to the prompt resolution,
/// prompted per placement (when a prompt is given), composed with an empty
/// bottom-right cell.
Canvas prompted_canvas(const Backbone& bb, const Image& x, const Image& y, const Image& x_query, int resolution,
                       const PromptParams* prompt, const Placement& placement);

/// Ground-truth canvas (x, y, x_q, y_q) at the same resolutions.
Canvas ground_truth_canvas(const Backbone& bb, const TaskPair& context, const TaskPair& query, int resolution);

/// Seeded split of a training set into (train, validation); validation gets
/// round(fraction * n) pairs, at least one when fraction > 0 and n > 1.
std::pair<Dataset, Dataset> split_validation(const Dataset& d, double fraction, std::uint64_t seed);

/// Mean loss over the queries and, when grad is non-null, dLoss/dTheta with
/// off-mask entries set to exactly zero.
double prompt_loss(const PromptTask& task, std::span<const PreparedQuery> queries, const PromptParams& prompt,
                   const Placement& placement, Image* grad, int workers = 0);

/// Adam state over the prompt plane; updates touch masked entries only.
class PromptOptimizer {
 public:
  PromptOptimizer(const PromptParams& prompt, const TrainConfig& cfg);
  void step(PromptParams& prompt, const Image& grad, double lr);
  const nn::Adam& adam() const { return adam_; }
  const std::vector<std::uint8_t>& active() const { return active_; }

 private:
  nn::Adam adam_;
  std::vector<std::uint8_t> active_;
};

struct TrainObserver {
  /// Called for every query of every step with its retrieved pair.
  std::function<void(std::uint32_t query_id, std::uint32_t context_id)> on_retrieval;
  /// Called after each optimizer step with the live prompt object.
  std::function<void(const PromptParams&)> on_step;
  /// Called after each completed epoch.
  std::function<void(const EpochRecord&, const PromptParams&)> on_epoch;
};

/// One optimizer step on a batch: leave-one-out retrieval, prompted canvas,
/// ground-truth tokens, masked cross-entropy, masked Adam update. Returns the
/// batch loss measured before the update.
double train_step(const PromptTask& task, std::span<const std::uint32_t> query_ids, PromptParams& prompt,
                  PromptOptimizer& opt, const TrainConfig& cfg, double lr, const TrainObserver* observer = nullptr);

struct TrainResult {
  PromptParams prompt;
  TrainHistory history;
};

using Validator = std::function<double(const PromptParams&)>;

/// Full training loop. `task.pool` is the training set; retrieval excludes the
/// query itself. When a validator is given, the best-scoring prompt (including
/// the initial one) is returned.
TrainResult train_prompt(const PromptTask& task, const TrainConfig& cfg, const Validator& validate = {},
                         const TrainObserver* observer = nullptr);

struct GradCheckResult {
  double max_relative_error = 0;
  double max_abs_off_mask = 0;
  int entries_checked = 0;
};

/// Central differences on `entries` randomly sampled masked coordinates of a
/// generic objective (value + analytic gradient).
using PromptObjective = std::function<double(const PromptParams&, Image* grad)>;
GradCheckResult grad_check(const PromptObjective& objective, const PromptParams& prompt, int entries, double eps,
                           std::uint64_t seed);

/// Gradient check of the real pipeline loss over the given queries.
GradCheckResult grad_check(const PromptParams& prompt, std::span<const PreparedQuery> queries,
                           const PromptTask& task, const Placement& placement, double eps, int entries = 32,
                           std::uint64_t seed = 0);

}  // namespace inmemo
