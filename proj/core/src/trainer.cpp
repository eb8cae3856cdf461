#include "inmemo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "inmemo/util.hpp"

namespace inmemo {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
  if (restart_period < 1 || restart_multiplier < 1)
    throw std::invalid_argument("TrainConfig: restart period and multiplier must be >= 1");
  if (placement.empty()) throw std::invalid_argument("TrainConfig: placement must not be empty");
  if (resolution < 1 || pad < 1) throw std::invalid_argument("TrainConfig: resolution and pad must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("TrainConfig: val_fraction in [0, 1)");
}

double cosine_warm_restarts(const TrainConfig& cfg, double t) {
  double period = cfg.restart_period;
  double start = 0.0;
  while (t >= start + period) {
    start += period;
    period *= cfg.restart_multiplier;
  }
  const double cur = (t - start) / period;
  return cfg.min_learning_rate +
         (cfg.learning_rate - cfg.min_learning_rate) * 0.5 * (1.0 + std::cos(M_PI * cur));
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,val_mIoU\n";
  for (const EpochRecord& e : epochs) {
    out << e.epoch << "," << e.mean_loss << ",";
    if (e.val_miou) out << *e.val_miou;
    out << "\n";
  }
  return out.str();
}

double compute_loss_grad(const LogitsGrid& logits, const TokenGrid& gt, const QuadrantMaskSpec& mask,
                         LogitsGrid& grad, double weight) {
  if (mask.positions.empty()) throw std::invalid_argument("compute_loss: empty mask");
  if (gt.rows != logits.rows || gt.cols != logits.cols || mask.grid_rows != logits.rows ||
      mask.grid_cols != logits.cols)
    throw std::invalid_argument("compute_loss: logits, targets and mask disagree on grid shape");
  const bool want_grad = grad.vocab != 0;
  const double n = static_cast<double>(mask.positions.size());
  double total = 0.0;
  std::vector<double> e(static_cast<std::size_t>(logits.vocab));
  for (const TokenPos& p : mask.positions) {
    const auto row = logits.at(p.row, p.col);
    const int y = gt.at(p.row, p.col);
    if (y < 0 || y >= logits.vocab) throw std::out_of_range("compute_loss: target token out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (int w = 0; w < logits.vocab; ++w) {
      e[w] = std::exp(row[w] - mx);
      z += e[w];
    }
    total += std::log(z) + mx - row[y];
    if (want_grad) {
      auto g = grad.at(p.row, p.col);
      for (int w = 0; w < logits.vocab; ++w) g[w] = weight * e[w] / z / n;
      g[y] -= weight / n;
    }
  }
  return total / n;
}

double compute_loss(const LogitsGrid& logits, const TokenGrid& gt, const QuadrantMaskSpec& mask) {
  LogitsGrid none;
  return compute_loss_grad(logits, gt, mask, none);
}

Canvas prompted_canvas(const Backbone& bb, const Image& x, const Image& y, const Image& x_query, int resolution,
                       const PromptParams* prompt, const Placement& placement) {
  const int cell = bb.cell_size();
  const Image xr = resize_bilinear(x, resolution, resolution);
  const Image yr = resize_bilinear(y, resolution, resolution);
  const Image qr = resize_bilinear(x_query, resolution, resolution);
  if (!prompt) return compose_canvas(xr, yr, qr, cell);
  const PlacedImages placed = apply_placement(xr, yr, qr, *prompt, placement);
  return compose_canvas(placed.input, placed.label, placed.query, cell);
}

Canvas ground_truth_canvas(const Backbone& bb, const TaskPair& context, const TaskPair& query, int resolution) {
  auto r = [&](const Image& img) { return resize_bilinear(img, resolution, resolution); };
  return compose_gt_canvas(r(context.input), r(context.label), r(query.input), r(query.label), bb.cell_size());
}

PreparedQuery prepare_query(const PromptTask& task, const TaskPair& query, int resolution, bool exclude_self) {
  const std::uint32_t ctx = retrieve(task.index, task.extractor, query.input,
                                     exclude_self ? std::optional<std::uint32_t>(query.id) : std::nullopt);
  PreparedQuery pq;
  pq.query = &query;
  pq.context = &task.pool.by_id(ctx);
  pq.gt_tokens = tokenize(task.backbone, ground_truth_canvas(task.backbone, *pq.context, query, resolution));
  return pq;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& d, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "validation-split"));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(d.size())));
  if (fraction > 0.0 && d.size() > 1) n_val = std::clamp<std::size_t>(n_val, 1, d.size() - 1);
  if (fraction <= 0.0) n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {d.subset(train), d.subset(val)};
}

double prompt_loss(const PromptTask& task, std::span<const PreparedQuery> queries, const PromptParams& prompt,
                   const Placement& placement, Image* grad, int workers) {
  if (queries.empty()) throw std::invalid_argument("prompt_loss: no queries");
  const Backbone& bb = task.backbone;
  const QuadrantMaskSpec mask = backbone_mask(bb);
  const int R = prompt.resolution;
  const double weight = 1.0 / static_cast<double>(queries.size());
  std::vector<double> losses(queries.size());
  std::vector<Image> grads(grad ? queries.size() : 0);

  parallel_for(queries.size(), workers, [&](std::size_t i) {
    const PreparedQuery& q = queries[i];
    const Canvas cv =
        prompted_canvas(bb, q.context->input, q.context->label, q.query->input, R, &prompt, placement);
    if (!grad) {
      losses[i] = compute_loss(bb.predict_logits(cv, mask), q.gt_tokens, mask);
      return;
    }
    const Image gcanvas = bb.predict_logits_vjp(cv, mask, [&](const LogitsGrid& logits) {
      LogitsGrid g(logits.rows, logits.cols, logits.vocab);
      losses[i] = compute_loss_grad(logits, q.gt_tokens, mask, g, weight);
      return g;
    });
    const CellGradients cells = compose_canvas_adjoint(gcanvas, bb.cell_size(), R, R);
    Image g(R, R);
    for (std::size_t k = 0; k < g.data.size(); ++k) {
      double s = 0.0;
      if (placement.input) s += cells.input.data[k];
      if (placement.label) s += cells.label.data[k];
      if (placement.query) s += cells.query.data[k];
      g.data[k] = prompt.delta * s;
    }
    grads[i] = std::move(g);
  });

  double loss = 0.0;
  for (double l : losses) loss += l * weight;
  if (grad) {
    *grad = Image(R, R);
    for (const Image& g : grads)
      for (std::size_t k = 0; k < g.data.size(); ++k) grad->data[k] += g.data[k];
    const std::vector<std::uint8_t> m = border_mask(R, prompt.pad);
    for (std::size_t k = 0; k < m.size(); ++k)
      if (!m[k])
        for (int ch = 0; ch < 3; ++ch) grad->data[k * 3 + ch] = 0.0;
  }
  return loss;
}

PromptOptimizer::PromptOptimizer(const PromptParams& prompt, const TrainConfig& cfg)
    : adam_(prompt.theta.data.size(), cfg.beta1, cfg.beta2, cfg.adam_eps) {
  const std::vector<std::uint8_t> m = border_mask(prompt.resolution, prompt.pad);
  active_.resize(prompt.theta.data.size());
  for (std::size_t k = 0; k < m.size(); ++k)
    for (int ch = 0; ch < 3; ++ch) active_[k * 3 + ch] = m[k];
}

void PromptOptimizer::step(PromptParams& prompt, const Image& grad, double lr) {
  adam_.step(prompt.theta.data, grad.data, lr, active_);
}

double train_step(const PromptTask& task, std::span<const std::uint32_t> query_ids, PromptParams& prompt,
                  PromptOptimizer& opt, const TrainConfig& cfg, double lr, const TrainObserver* observer) {
  if (!satisfies_support(prompt)) throw std::invalid_argument("train_step: prompt violates the support constraint");
  std::vector<PreparedQuery> batch;
  batch.reserve(query_ids.size());
  for (std::uint32_t id : query_ids) {
    batch.push_back(prepare_query(task, task.pool.by_id(id), prompt.resolution, true));
    if (observer && observer->on_retrieval) observer->on_retrieval(id, batch.back().context->id);
  }
  Image grad;
  const double loss = prompt_loss(task, batch, prompt, cfg.placement, &grad, cfg.workers);
  opt.step(prompt, grad, lr);
  if (observer && observer->on_step) observer->on_step(prompt);
  return loss;
}

TrainResult train_prompt(const PromptTask& task, const TrainConfig& cfg, const Validator& validate,
                         const TrainObserver* observer) {
  cfg.validate();
  if (task.pool.empty()) throw std::invalid_argument("train_prompt: training set is empty");
  if (task.pool.size() < 2) throw std::invalid_argument("train_prompt: leave-one-out retrieval needs >= 2 pairs");

  TrainResult result;
  result.prompt = init_prompt(cfg.resolution, cfg.pad, cfg.init, cfg.init_sigma, derive_seed(cfg.seed, "prompt"),
                              cfg.delta);
  result.prompt.backbone_fingerprint = task.backbone.fingerprint();
  if (cfg.epochs == 0) return result;

  PromptParams& prompt = result.prompt;
  PromptOptimizer opt(prompt, cfg);
  TrainHistory& history = result.history;
  PromptParams best = prompt;
  double best_score = 0.0;
  if (validate) {
    best_score = validate(prompt);
    history.initial_val_miou = best_score;
  }

  std::vector<std::uint32_t> ids;
  for (const auto& p : task.pool.pairs) ids.push_back(p.id);
  const std::size_t n_batches = (ids.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(ids.begin(), ids.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(ids.size(), lo + cfg.batch_size);
      const double lr = cosine_warm_restarts(cfg, epoch + static_cast<double>(b) / n_batches);
      const double loss =
          train_step(task, std::span(ids).subspan(lo, hi - lo), prompt, opt, cfg, lr, observer);
      loss_sum += loss * static_cast<double>(hi - lo);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_loss = loss_sum / static_cast<double>(ids.size());
    if (!std::isfinite(rec.mean_loss)) {
      history.epochs.push_back(rec);
      throw TrainingDiverged("train_prompt: non-finite loss in epoch " + std::to_string(rec.epoch), history);
    }
    if (validate) {
      rec.val_miou = validate(prompt);
      if (*rec.val_miou > best_score) {
        best_score = *rec.val_miou;
        best = prompt;
        history.best_epoch = rec.epoch;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (observer && observer->on_epoch) observer->on_epoch(rec, prompt);
  }
  if (validate) result.prompt = best;
  else history.best_epoch = cfg.epochs;
  return result;
}

GradCheckResult grad_check(const PromptObjective& objective, const PromptParams& prompt, int entries, double eps,
                           std::uint64_t seed) {
  if (entries < 1) throw std::invalid_argument("grad_check: need at least one entry");
  GradCheckResult res;
  Image analytic;
  objective(prompt, &analytic);
  const std::vector<std::uint8_t> m = border_mask(prompt.resolution, prompt.pad);
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < m.size(); ++k)
    for (int ch = 0; ch < 3; ++ch) {
      if (m[k]) candidates.push_back(k * 3 + ch);
      else res.max_abs_off_mask = std::max(res.max_abs_off_mask, std::abs(analytic.data[k * 3 + ch]));
    }
  std::mt19937_64 rng(derive_seed(seed, "grad-check"));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(entries)));

  PromptParams probe = prompt;
  for (std::size_t idx : candidates) {
    const double orig = probe.theta.data[idx];
    probe.theta.data[idx] = orig + eps;
    const double up = objective(probe, nullptr);
    probe.theta.data[idx] = orig - eps;
    const double down = objective(probe, nullptr);
    probe.theta.data[idx] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.data[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(a - numeric) / denom);
    ++res.entries_checked;
  }
  return res;
}

GradCheckResult grad_check(const PromptParams& prompt, std::span<const PreparedQuery> queries, const PromptTask& task,
                           const Placement& placement, double eps, int entries, std::uint64_t seed) {
  if (queries.empty()) throw std::invalid_argument("grad_check: need at least one query");
  const PromptObjective objective = [&](const PromptParams& p, Image* grad) {
    return prompt_loss(task, queries, p, placement, grad, 1);
  };
  return grad_check(objective, prompt, entries, eps, seed);
}

}  // namespace inmemo
