#include <cmath>
#include <sstream>
#include <stdexcept>

#include "inmemo/backbone.hpp"
#include "inmemo/util.hpp"

namespace inmemo {

using nn::Mat;

Image render_task_label(const TaskPair& pair, CanvasTask task) {
  switch (task) {
    case CanvasTask::segmentation:
      return pair.label;
    case CanvasTask::identity:
      return pair.input;
    case CanvasTask::inverted: {
      Image out = pair.label;
      for (double& v : out.data) v = 1.0 - v;
      return out;
    }
    case CanvasTask::box: {
      const int n = pair.label.height;
      if (pair.label.width != n) throw std::invalid_argument("render_task_label: box task needs square labels");
      const std::vector<double> lum = luminance(pair.label);
      std::vector<std::uint8_t> fg(lum.size());
      for (std::size_t i = 0; i < lum.size(); ++i) fg[i] = lum[i] > 0.5 ? 1 : 0;
      const std::vector<std::uint8_t> box = bounding_box_fill(fg, n);
      Image out(n, n);
      for (std::size_t i = 0; i < box.size(); ++i)
        for (int ch = 0; ch < 3; ++ch) out.data[i * 3 + ch] = box[i] ? 1.0 : 0.0;
      return out;
    }
  }
  throw std::invalid_argument("render_task_label: unknown task");
}

Canvas sample_pretrain_canvas(const Dataset& data, const PretrainConfig& cfg, std::mt19937_64& rng) {
  if (data.empty()) throw std::invalid_argument("sample_pretrain_canvas: dataset is empty");
  std::discrete_distribution<int> task_dist(cfg.task_weights.begin(), cfg.task_weights.end());
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const auto task = static_cast<CanvasTask>(task_dist(rng));
  const std::size_t ctx = pick(rng);
  std::size_t query = pick(rng);
  if (data.size() > 1)
    while (query == ctx) query = pick(rng);
  const TaskPair& a = data.pairs[ctx];
  const TaskPair& q = data.pairs[query];
  return compose_gt_canvas(a.input, render_task_label(a, task), q.input, render_task_label(q, task),
                           cfg.model.canvas_size / 2);
}

double reconstruction_mae(const Backbone& bb, std::span<const Canvas> canvases) {
  if (canvases.empty()) throw std::invalid_argument("reconstruction_mae: no canvases");
  double total = 0.0;
  std::size_t count = 0;
  for (const Canvas& cv : canvases) {
    const Image rec = bb.decode(tokenize(bb, cv));
    for (std::size_t i = 0; i < rec.data.size(); ++i) total += std::abs(rec.data[i] - cv.pixels.data[i]);
    count += rec.data.size();
  }
  return total / static_cast<double>(count);
}

namespace {

void check_finite(double loss, const char* stage, int step) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "pretrain_backbone: non-finite " << stage << " loss at step " << step;
    throw std::runtime_error(msg.str());
  }
}

double warmup_cosine(int step, int total, int warmup, double base) {
  if (step < warmup) return base * (step + 1) / warmup;
  const double progress = static_cast<double>(step - warmup) / std::max(1, total - warmup);
  return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

TokenizerNet train_tokenizer(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed, double* final_loss,
                             const std::function<void(const std::string&)>& log) {
  const BackboneConfig& mc = cfg.model;
  TokenizerNet tok(mc);
  tok.init(seed);

  // Patch pool from freshly sampled canvases.
  std::mt19937_64 rng(derive_seed(seed, "tokenizer-canvases"));
  const int pool_canvases = std::max(8, cfg.tokenizer_batch * 32 / mc.tokens());
  Mat pool(static_cast<Eigen::Index>(pool_canvases) * mc.tokens(), mc.patch_dim());
  for (int i = 0; i < pool_canvases; ++i)
    pool.middleRows(static_cast<Eigen::Index>(i) * mc.tokens(), mc.tokens()) =
        patchify(sample_pretrain_canvas(data, cfg, rng).pixels, mc.patch);

  std::mt19937_64 batch_rng(derive_seed(seed, "tokenizer-batches"));
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
  auto sample_batch = [&] {
    Mat b(cfg.tokenizer_batch, mc.patch_dim());
    for (int i = 0; i < cfg.tokenizer_batch; ++i) b.row(i) = pool.row(pick(batch_rng));
    return b;
  };

  const nn::ParamStore& store = tok.store();
  const int cb_slot = store.find("codebook");
  {
    const Mat z = tok.encode(sample_batch());
    auto cb = store.view(std::span<double>(tok.params()), cb_slot);
    for (int w = 0; w < mc.vocab; ++w) cb.row(w) = z.row(w % z.rows());
  }

  nn::Adam adam(tok.params().size());
  std::vector<double> grads(tok.params().size());
  std::vector<int> usage(static_cast<std::size_t>(mc.vocab), 0);
  double loss = 0.0;
  for (int step = 0; step < cfg.tokenizer_steps; ++step) {
    const Mat patches = sample_batch();
    TokenizerNet::EncodeCache ec;
    const Mat z = tok.encode(patches, &ec);
    const std::vector<int> ids = tok.nearest_codes(z);
    const Mat cq = tok.gather_codes(ids);
    TokenizerNet::DecodeCache dc;
    const Mat out = tok.decode_vectors(cq, &dc);

    const double n_pix = static_cast<double>(patches.size());
    const double n_code = static_cast<double>(z.size());
    const double recon = (out - patches).squaredNorm() / n_pix;
    const double codebook_term = (cq - z).squaredNorm() / n_code;
    loss = recon + (1.0 + cfg.commitment) * codebook_term;
    check_finite(loss, "tokenizer", step);

    std::fill(grads.begin(), grads.end(), 0.0);
    const Mat dout = 2.0 * (out - patches) / n_pix;
    // Straight-through: the decoder's input gradient passes to the encoder.
    Mat dz = tok.decode_backward(dc, dout, grads);
    dz += 2.0 * cfg.commitment * (z - cq) / n_code;
    tok.encode_backward(ec, dz, grads);
    auto dcb = store.view(std::span<double>(grads), cb_slot);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      dcb.row(ids[i]) += 2.0 * (cq.row(static_cast<Eigen::Index>(i)) - z.row(static_cast<Eigen::Index>(i))) / n_code;
      ++usage[static_cast<std::size_t>(ids[i])];
    }
    adam.step(tok.params(), grads, cfg.tokenizer_lr);

    if (cfg.dead_code_interval > 0 && (step + 1) % cfg.dead_code_interval == 0 &&
        step + 1 < cfg.tokenizer_steps) {
      auto cb = store.view(std::span<double>(tok.params()), cb_slot);
      std::uniform_int_distribution<Eigen::Index> row_pick(0, z.rows() - 1);
      int reset = 0;
      for (int w = 0; w < mc.vocab; ++w)
        if (usage[static_cast<std::size_t>(w)] == 0) {
          cb.row(w) = z.row(row_pick(batch_rng));
          ++reset;
        }
      std::fill(usage.begin(), usage.end(), 0);
      if (log && ((step + 1) % (cfg.dead_code_interval * 5) == 0 || reset > 0)) {
        std::ostringstream msg;
        msg << "tokenizer step " << step + 1 << " loss " << loss << " reset " << reset << " codes";
        log(msg.str());
      }
    }
  }
  *final_loss = loss;
  return tok;
}

PredictorNet train_predictor(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed,
                             const TokenizerNet& tok, double* final_loss,
                             const std::function<void(const std::string&)>& log) {
  const BackboneConfig& mc = cfg.model;
  PredictorNet pred(mc);
  pred.init(seed);
  const QuadrantMaskSpec mask = masked_token_positions(mc.grid(), mc.grid());
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(mc.tokens()), 0);
  for (const TokenPos& t : mask.positions) flags[static_cast<std::size_t>(t.row) * mc.grid() + t.col] = 1;

  std::mt19937_64 rng(derive_seed(seed, "predictor-canvases"));
  nn::Adam adam(pred.params().size());
  const std::size_t n_params = pred.params().size();
  const int batch = cfg.predictor_batch;
  std::vector<std::vector<double>> sample_grads(static_cast<std::size_t>(batch), std::vector<double>(n_params));
  std::vector<double> sample_loss(static_cast<std::size_t>(batch));
  std::vector<double> grads(n_params);
  double ema = 0.0;

  for (int step = 0; step < cfg.predictor_steps; ++step) {
    std::vector<Mat> inputs(static_cast<std::size_t>(batch));
    std::vector<std::vector<int>> targets(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      inputs[b] = patchify(sample_pretrain_canvas(data, cfg, rng).pixels, mc.patch);
      targets[b] = tok.nearest_codes(tok.encode(inputs[b]));
    }
    parallel_for(static_cast<std::size_t>(batch), cfg.workers, [&](std::size_t b) {
      PredictorNet::Cache cache;
      Mat logits = pred.forward(inputs[b], flags, &cache);
      Mat dlogits = Mat::Zero(logits.rows(), logits.cols());
      double loss = 0.0;
      const double scale = 1.0 / (static_cast<double>(mask.size()) * batch);
      for (int t = 0; t < mc.tokens(); ++t) {
        if (!flags[static_cast<std::size_t>(t)]) continue;
        const double mx = logits.row(t).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(t).array() - mx).exp();
        const double z = e.sum();
        const int y = targets[b][static_cast<std::size_t>(t)];
        loss += std::log(z) + mx - logits(t, y);
        dlogits.row(t) = e / z * scale;
        dlogits(t, y) -= scale;
      }
      sample_loss[b] = loss / static_cast<double>(mask.size());
      std::fill(sample_grads[b].begin(), sample_grads[b].end(), 0.0);
      pred.backward(cache, dlogits, sample_grads[b], false);
    });
    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      loss += sample_loss[b] / batch;
      for (std::size_t i = 0; i < n_params; ++i) grads[i] += sample_grads[b][i];
    }
    check_finite(loss, "predictor", step);
    if (cfg.grad_clip > 0) nn::clip_global_norm(grads, cfg.grad_clip);
    adam.step(pred.params(), grads, warmup_cosine(step, cfg.predictor_steps, cfg.warmup_steps, cfg.predictor_lr));
    ema = step == 0 ? loss : 0.98 * ema + 0.02 * loss;
    if (log && ((step + 1) % 100 == 0 || step + 1 == cfg.predictor_steps)) {
      std::ostringstream msg;
      msg << "predictor step " << step + 1 << " loss " << loss << " (ema " << ema << ")";
      log(msg.str());
    }
  }
  *final_loss = ema;
  return pred;
}

}  // namespace

ToyBackbone pretrain_backbone(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed,
                              PretrainReport* report, const std::function<void(const std::string&)>& log) {
  if (data.empty()) throw std::invalid_argument("pretrain_backbone: dataset is empty");
  cfg.model.validate();
  if (data.pairs.front().input.height != data.pairs.front().input.width)
    throw std::invalid_argument("pretrain_backbone: images must be square");

  PretrainReport rep;
  TokenizerNet tok = train_tokenizer(data, cfg, derive_seed(seed, "tokenizer"), &rep.tokenizer_final_loss, log);
  PredictorNet pred =
      train_predictor(data, cfg, derive_seed(seed, "predictor"), tok, &rep.predictor_final_loss, log);
  ToyBackbone bb(std::move(tok), std::move(pred));

  std::mt19937_64 rng(derive_seed(seed, "holdout-canvases"));
  std::vector<Canvas> holdout;
  for (int i = 0; i < cfg.holdout_canvases; ++i) holdout.push_back(sample_pretrain_canvas(data, cfg, rng));
  if (!holdout.empty()) rep.holdout_recon_mae = reconstruction_mae(bb, holdout);
  std::vector<std::uint8_t> used(static_cast<std::size_t>(cfg.model.vocab), 0);
  for (const Canvas& cv : holdout)
    for (int t : tokenize(bb, cv).tokens) used[static_cast<std::size_t>(t)] = 1;
  for (auto u : used) rep.codes_in_use += u;
  if (log) {
    std::ostringstream msg;
    msg << "pretraining done: holdout reconstruction MAE " << rep.holdout_recon_mae << ", " << rep.codes_in_use
        << " codes in use, fingerprint " << bb.fingerprint();
    log(msg.str());
  }
  if (report) *report = rep;
  return bb;
}

}  // namespace inmemo
