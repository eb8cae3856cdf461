#include "inmemo/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "inmemo/binary_io.hpp"
#include "inmemo/util.hpp"

namespace inmemo {

using nn::Mat;
using nn::Vec;

TokenGrid argmax_tokens(const LogitsGrid& logits) {
  TokenGrid z{logits.rows, logits.cols, std::vector<int>(static_cast<std::size_t>(logits.rows) * logits.cols)};
  for (int r = 0; r < logits.rows; ++r)
    for (int c = 0; c < logits.cols; ++c) {
      const auto row = logits.at(r, c);
      int best = 0;
      for (int w = 1; w < logits.vocab; ++w)
        if (row[w] > row[best]) best = w;
      z.tokens[static_cast<std::size_t>(r) * logits.cols + c] = best;
    }
  return z;
}

TokenGrid tokenize(const Backbone& bb, const Canvas& cv) { return argmax_tokens(bb.tokenizer_logits(cv)); }

LogitsGrid predict_logits(const Backbone& bb, const Canvas& cv, const QuadrantMaskSpec& mask) {
  return bb.predict_logits(cv, mask);
}

TokenGrid predict_tokens(const Backbone& bb, const Canvas& cv, const QuadrantMaskSpec& mask) {
  return argmax_tokens(bb.predict_logits(cv, mask));
}

Image decode(const Backbone& bb, const TokenGrid& z) { return bb.decode(z); }

QuadrantMaskSpec backbone_mask(const Backbone& bb) { return masked_token_positions(bb.grid_rows(), bb.grid_cols()); }

void BackboneConfig::validate() const {
  if (canvas_size < 2 || patch < 1 || canvas_size % patch != 0 || grid() % 2 != 0)
    throw std::invalid_argument("BackboneConfig: canvas must split into an even grid of patches");
  if ((canvas_size / 2) % patch != 0)
    throw std::invalid_argument("BackboneConfig: cell size must be a multiple of the patch size");
  if (vocab < 2) throw std::invalid_argument("BackboneConfig: vocabulary needs at least 2 codes");
  if (code_dim < 1 || tokenizer_hidden < 1 || model_dim < 1 || layers < 0 || mlp_hidden < 1)
    throw std::invalid_argument("BackboneConfig: non-positive width");
  if (heads < 1 || model_dim % heads != 0) throw std::invalid_argument("BackboneConfig: heads must divide model_dim");
}

Mat patchify(const Image& img, int patch) {
  const int gr = img.height / patch;
  const int gc = img.width / patch;
  Mat out(gr * gc, patch * patch * 3);
  for (int tr = 0; tr < gr; ++tr)
    for (int tc = 0; tc < gc; ++tc) {
      const int t = tr * gc + tc;
      int k = 0;
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c)
          for (int ch = 0; ch < 3; ++ch) out(t, k++) = img.at(tr * patch + r, tc * patch + c, ch);
    }
  return out;
}

Image unpatchify(const Mat& patches, int grid_rows, int grid_cols, int patch) {
  Image img(grid_rows * patch, grid_cols * patch);
  for (int tr = 0; tr < grid_rows; ++tr)
    for (int tc = 0; tc < grid_cols; ++tc) {
      const int t = tr * grid_cols + tc;
      int k = 0;
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c)
          for (int ch = 0; ch < 3; ++ch) img.at(tr * patch + r, tc * patch + c, ch) = patches(t, k++);
    }
  return img;
}

namespace {

void fill_normal(nn::MatMap m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
}

Mat add_row(const Mat& m, const Vec& row) { return m.rowwise() + row; }

Vec as_vec(const nn::ConstMatMap& m) { return Vec(Eigen::Map<const Vec>(m.data(), m.size())); }

void accumulate(nn::MatMap dst, const Mat& src) { dst += src; }

}  // namespace

// ---------------------------------------------------------------------------
// TokenizerNet

TokenizerNet::TokenizerNet(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int pd = cfg.patch_dim();
  enc_w1_ = store_.add("enc.w1", pd, cfg.tokenizer_hidden);
  enc_b1_ = store_.add("enc.b1", 1, cfg.tokenizer_hidden);
  enc_w2_ = store_.add("enc.w2", cfg.tokenizer_hidden, cfg.code_dim);
  enc_b2_ = store_.add("enc.b2", 1, cfg.code_dim);
  codebook_ = store_.add("codebook", cfg.vocab, cfg.code_dim);
  dec_w1_ = store_.add("dec.w1", cfg.code_dim, cfg.tokenizer_hidden);
  dec_b1_ = store_.add("dec.b1", 1, cfg.tokenizer_hidden);
  dec_w2_ = store_.add("dec.w2", cfg.tokenizer_hidden, pd);
  dec_b2_ = store_.add("dec.b2", 1, pd);
  params_.assign(store_.size(), 0.0);
}

void TokenizerNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "tokenizer-init"));
  std::fill(params_.begin(), params_.end(), 0.0);
  fill_normal(store_.view(params_, enc_w1_), rng, 1.0 / std::sqrt(cfg_.patch_dim()));
  fill_normal(store_.view(params_, enc_w2_), rng, 1.0 / std::sqrt(cfg_.tokenizer_hidden));
  fill_normal(store_.view(params_, codebook_), rng, 0.5);
  fill_normal(store_.view(params_, dec_w1_), rng, 1.0 / std::sqrt(cfg_.code_dim));
  fill_normal(store_.view(params_, dec_w2_), rng, 1.0 / std::sqrt(cfg_.tokenizer_hidden));
}

Mat TokenizerNet::encode(const Mat& patches, EncodeCache* cache) const {
  const std::span<const double> p(params_);
  Mat centered = patches.array() - 0.5;
  Mat hp = add_row(centered * store_.view(p, enc_w1_), as_vec(store_.view(p, enc_b1_)));
  Mat h = nn::gelu(hp);
  Mat z = add_row(h * store_.view(p, enc_w2_), as_vec(store_.view(p, enc_b2_)));
  if (cache) *cache = {std::move(centered), std::move(hp), std::move(h)};
  return z;
}

Mat TokenizerNet::code_logits(const Mat& z) const {
  const auto cb = store_.view(std::span<const double>(params_), codebook_);
  Mat out(z.rows(), cfg_.vocab);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (int w = 0; w < cfg_.vocab; ++w) out(i, w) = -(z.row(i) - cb.row(w)).squaredNorm();
  return out;
}

std::vector<int> TokenizerNet::nearest_codes(const Mat& z) const {
  const Mat logits = code_logits(z);
  std::vector<int> ids(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    for (int w = 1; w < cfg_.vocab; ++w)
      if (logits(i, w) > logits(i, best)) best = w;
    ids[static_cast<std::size_t>(i)] = best;
  }
  return ids;
}

Mat TokenizerNet::gather_codes(const std::vector<int>& ids) const {
  const auto cb = store_.view(std::span<const double>(params_), codebook_);
  Mat out(static_cast<Eigen::Index>(ids.size()), cfg_.code_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg_.vocab) throw std::out_of_range("token index out of vocabulary range");
    out.row(static_cast<Eigen::Index>(i)) = cb.row(ids[i]);
  }
  return out;
}

Mat TokenizerNet::decode_vectors(const Mat& codes, DecodeCache* cache) const {
  const std::span<const double> p(params_);
  Mat hp = add_row(codes * store_.view(p, dec_w1_), as_vec(store_.view(p, dec_b1_)));
  Mat h = nn::gelu(hp);
  Mat out = add_row(h * store_.view(p, dec_w2_), as_vec(store_.view(p, dec_b2_))).array() + 0.5;
  if (cache) *cache = {codes, std::move(hp), std::move(h)};
  return out;
}

Mat TokenizerNet::decode_backward(const DecodeCache& cache, const Mat& dout, std::span<double> grads) const {
  const std::span<const double> p(params_);
  accumulate(store_.view(grads, dec_w2_), cache.hidden.transpose() * dout);
  accumulate(store_.view(grads, dec_b2_), dout.colwise().sum());
  const Mat dh = nn::gelu_backward(dout * store_.view(p, dec_w2_).transpose(), cache.hidden_pre);
  accumulate(store_.view(grads, dec_w1_), cache.input.transpose() * dh);
  accumulate(store_.view(grads, dec_b1_), dh.colwise().sum());
  return dh * store_.view(p, dec_w1_).transpose();
}

void TokenizerNet::encode_backward(const EncodeCache& cache, const Mat& dz, std::span<double> grads) const {
  const std::span<const double> p(params_);
  accumulate(store_.view(grads, enc_w2_), cache.hidden.transpose() * dz);
  accumulate(store_.view(grads, enc_b2_), dz.colwise().sum());
  const Mat dh = nn::gelu_backward(dz * store_.view(p, enc_w2_).transpose(), cache.hidden_pre);
  accumulate(store_.view(grads, enc_w1_), cache.centered.transpose() * dh);
  accumulate(store_.view(grads, enc_b1_), dh.colwise().sum());
}

// ---------------------------------------------------------------------------
// PredictorNet

PredictorNet::PredictorNet(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.model_dim;
  embed_w_ = store_.add("embed.w", cfg.patch_dim(), d);
  embed_b_ = store_.add("embed.b", 1, d);
  pos_ = store_.add("pos", cfg.tokens(), d);
  mask_ = store_.add("mask", 1, d);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    BlockSlots b{};
    b.ln1_g = store_.add(pre + "ln1.g", 1, d);
    b.ln1_b = store_.add(pre + "ln1.b", 1, d);
    b.qkv_w = store_.add(pre + "qkv.w", d, 3 * d);
    b.qkv_b = store_.add(pre + "qkv.b", 1, 3 * d);
    b.proj_w = store_.add(pre + "proj.w", d, d);
    b.proj_b = store_.add(pre + "proj.b", 1, d);
    b.ln2_g = store_.add(pre + "ln2.g", 1, d);
    b.ln2_b = store_.add(pre + "ln2.b", 1, d);
    b.fc1_w = store_.add(pre + "fc1.w", d, cfg.mlp_hidden);
    b.fc1_b = store_.add(pre + "fc1.b", 1, cfg.mlp_hidden);
    b.fc2_w = store_.add(pre + "fc2.w", cfg.mlp_hidden, d);
    b.fc2_b = store_.add(pre + "fc2.b", 1, d);
    blocks_.push_back(b);
  }
  lnf_g_ = store_.add("lnf.g", 1, d);
  lnf_b_ = store_.add("lnf.b", 1, d);
  head_w_ = store_.add("head.w", d, cfg.vocab);
  head_b_ = store_.add("head.b", 1, cfg.vocab);
  params_.assign(store_.size(), 0.0);
}

void PredictorNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "predictor-init"));
  std::fill(params_.begin(), params_.end(), 0.0);
  const int d = cfg_.model_dim;
  const double resid_scale = 1.0 / std::sqrt(2.0 * std::max(cfg_.layers, 1));
  fill_normal(store_.view(params_, embed_w_), rng, 1.0 / std::sqrt(cfg_.patch_dim()));
  fill_normal(store_.view(params_, pos_), rng, 0.02);
  fill_normal(store_.view(params_, mask_), rng, 0.02);
  for (const BlockSlots& b : blocks_) {
    store_.view(params_, b.ln1_g).setOnes();
    store_.view(params_, b.ln2_g).setOnes();
    fill_normal(store_.view(params_, b.qkv_w), rng, 1.0 / std::sqrt(d));
    fill_normal(store_.view(params_, b.proj_w), rng, resid_scale / std::sqrt(d));
    fill_normal(store_.view(params_, b.fc1_w), rng, 1.0 / std::sqrt(d));
    fill_normal(store_.view(params_, b.fc2_w), rng, resid_scale / std::sqrt(cfg_.mlp_hidden));
  }
  store_.view(params_, lnf_g_).setOnes();
  fill_normal(store_.view(params_, head_w_), rng, 0.02);
}

Mat PredictorNet::forward(const Mat& patches, std::span<const std::uint8_t> masked, Cache* cache) const {
  const std::span<const double> p(params_);
  const int T = cfg_.tokens();
  const int d = cfg_.model_dim;
  const int dh = d / cfg_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (patches.rows() != T || patches.cols() != cfg_.patch_dim() || masked.size() != static_cast<std::size_t>(T))
    throw std::invalid_argument("PredictorNet::forward: shape mismatch");

  Cache local;
  Cache& c = cache ? *cache : local;
  c.centered = patches.array() - 0.5;
  c.masked.assign(masked.begin(), masked.end());
  Mat x = add_row(c.centered * store_.view(p, embed_w_), as_vec(store_.view(p, embed_b_))) + store_.view(p, pos_);
  const auto mask_row = store_.view(p, mask_);
  for (int t = 0; t < T; ++t)
    if (masked[t]) x.row(t) = mask_row + store_.view(p, pos_).row(t);

  c.blocks.resize(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const BlockSlots& b = blocks_[l];
    BlockCache& bc = c.blocks[l];
    if (cache) bc.x_in = x;
    bc.a = nn::layer_norm(x, as_vec(store_.view(p, b.ln1_g)), as_vec(store_.view(p, b.ln1_b)), bc.ln1);
    bc.qkv = add_row(bc.a * store_.view(p, b.qkv_w), as_vec(store_.view(p, b.qkv_b)));
    bc.attn.resize(static_cast<std::size_t>(cfg_.heads));
    bc.o.resize(T, d);
    for (int h = 0; h < cfg_.heads; ++h) {
      Mat s = bc.qkv.middleCols(h * dh, dh) * bc.qkv.middleCols(d + h * dh, dh).transpose() * scale;
      nn::softmax_rows_inplace(s);
      bc.o.middleCols(h * dh, dh) = s * bc.qkv.middleCols(2 * d + h * dh, dh);
      bc.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    x += add_row(bc.o * store_.view(p, b.proj_w), as_vec(store_.view(p, b.proj_b)));
    if (cache) bc.x_mid = x;
    bc.b = nn::layer_norm(x, as_vec(store_.view(p, b.ln2_g)), as_vec(store_.view(p, b.ln2_b)), bc.ln2);
    bc.h_pre = add_row(bc.b * store_.view(p, b.fc1_w), as_vec(store_.view(p, b.fc1_b)));
    bc.h = nn::gelu(bc.h_pre);
    x += add_row(bc.h * store_.view(p, b.fc2_w), as_vec(store_.view(p, b.fc2_b)));
  }
  c.x_out = x;
  c.af = nn::layer_norm(x, as_vec(store_.view(p, lnf_g_)), as_vec(store_.view(p, lnf_b_)), c.lnf);
  return add_row(c.af * store_.view(p, head_w_), as_vec(store_.view(p, head_b_)));
}

Mat PredictorNet::backward(const Cache& c, const Mat& dlogits, std::span<double> grads, bool want_input_grad) const {
  const std::span<const double> p(params_);
  const bool wg = !grads.empty();
  if (wg && grads.size() != params_.size()) throw std::invalid_argument("PredictorNet::backward: grad buffer size");
  const int T = cfg_.tokens();
  const int d = cfg_.model_dim;
  const int dh = d / cfg_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (wg) {
    accumulate(store_.view(grads, head_w_), c.af.transpose() * dlogits);
    accumulate(store_.view(grads, head_b_), dlogits.colwise().sum());
  }
  Mat daf = dlogits * store_.view(p, head_w_).transpose();
  Vec dg = Vec::Zero(d), db = Vec::Zero(d);
  Mat dx = nn::layer_norm_backward(daf, c.lnf, as_vec(store_.view(p, lnf_g_)), &dg, &db);
  if (wg) {
    accumulate(store_.view(grads, lnf_g_), dg);
    accumulate(store_.view(grads, lnf_b_), db);
  }

  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const BlockSlots& b = blocks_[li];
    const BlockCache& bc = c.blocks[li];
    // MLP branch.
    if (wg) {
      accumulate(store_.view(grads, b.fc2_w), bc.h.transpose() * dx);
      accumulate(store_.view(grads, b.fc2_b), dx.colwise().sum());
    }
    const Mat dh_pre = nn::gelu_backward(dx * store_.view(p, b.fc2_w).transpose(), bc.h_pre);
    if (wg) {
      accumulate(store_.view(grads, b.fc1_w), bc.b.transpose() * dh_pre);
      accumulate(store_.view(grads, b.fc1_b), dh_pre.colwise().sum());
    }
    const Mat dbn = dh_pre * store_.view(p, b.fc1_w).transpose();
    dg.setZero();
    db.setZero();
    dx += nn::layer_norm_backward(dbn, bc.ln2, as_vec(store_.view(p, b.ln2_g)), &dg, &db);
    if (wg) {
      accumulate(store_.view(grads, b.ln2_g), dg);
      accumulate(store_.view(grads, b.ln2_b), db);
    }
    // Attention branch.
    if (wg) {
      accumulate(store_.view(grads, b.proj_w), bc.o.transpose() * dx);
      accumulate(store_.view(grads, b.proj_b), dx.colwise().sum());
    }
    const Mat d_o = dx * store_.view(p, b.proj_w).transpose();
    Mat dqkv(T, 3 * d);
    for (int h = 0; h < cfg_.heads; ++h) {
      const Mat& attn = bc.attn[static_cast<std::size_t>(h)];
      const auto q = bc.qkv.middleCols(h * dh, dh);
      const auto k = bc.qkv.middleCols(d + h * dh, dh);
      const auto v = bc.qkv.middleCols(2 * d + h * dh, dh);
      const auto doh = d_o.middleCols(h * dh, dh);
      const Mat dattn = doh * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh) = attn.transpose() * doh;
      const Eigen::VectorXd rowdot = dattn.cwiseProduct(attn).rowwise().sum();
      const Mat ds = (attn.array() * (dattn.colwise() - rowdot).array()).matrix() * scale;
      dqkv.middleCols(h * dh, dh) = ds * k;
      dqkv.middleCols(d + h * dh, dh) = ds.transpose() * q;
    }
    if (wg) {
      accumulate(store_.view(grads, b.qkv_w), bc.a.transpose() * dqkv);
      accumulate(store_.view(grads, b.qkv_b), dqkv.colwise().sum());
    }
    const Mat da = dqkv * store_.view(p, b.qkv_w).transpose();
    dg.setZero();
    db.setZero();
    dx += nn::layer_norm_backward(da, bc.ln1, as_vec(store_.view(p, b.ln1_g)), &dg, &db);
    if (wg) {
      accumulate(store_.view(grads, b.ln1_g), dg);
      accumulate(store_.view(grads, b.ln1_b), db);
    }
  }

  // Embedding: masked rows came from the mask vector, not from pixels.
  Mat dx_visible = dx;
  Vec dmask = Vec::Zero(d);
  for (int t = 0; t < T; ++t)
    if (c.masked[static_cast<std::size_t>(t)]) {
      dmask += dx.row(t);
      dx_visible.row(t).setZero();
    }
  if (wg) {
    accumulate(store_.view(grads, pos_), dx);
    accumulate(store_.view(grads, mask_), dmask);
    accumulate(store_.view(grads, embed_w_), c.centered.transpose() * dx_visible);
    accumulate(store_.view(grads, embed_b_), dx_visible.colwise().sum());
  }
  if (!want_input_grad) return {};
  return dx_visible * store_.view(p, embed_w_).transpose();
}

// ---------------------------------------------------------------------------
// ToyBackbone

ToyBackbone::ToyBackbone(TokenizerNet tokenizer, PredictorNet predictor)
    : cfg_(tokenizer.config()), tokenizer_(std::move(tokenizer)), predictor_(std::move(predictor)) {
  if (!(predictor_.config() == cfg_)) throw std::invalid_argument("ToyBackbone: tokenizer/predictor config mismatch");
  fingerprint_ = compute_fingerprint();
}

std::string ToyBackbone::compute_fingerprint() const {
  const std::vector<std::int32_t> header{cfg_.canvas_size, cfg_.patch,     cfg_.vocab,  cfg_.code_dim,
                                         cfg_.tokenizer_hidden, cfg_.model_dim, cfg_.heads, cfg_.layers,
                                         cfg_.mlp_hidden};
  std::vector<std::byte> bytes;
  auto append = [&](std::span<const std::byte> b) { bytes.insert(bytes.end(), b.begin(), b.end()); };
  append(std::as_bytes(std::span(header)));
  append(std::as_bytes(std::span(tokenizer_.params())));
  append(std::as_bytes(std::span(predictor_.params())));
  return sha256_hex(bytes);
}

void ToyBackbone::check_canvas(const Canvas& cv) const {
  if (cv.pixels.height != cfg_.canvas_size || cv.pixels.width != cfg_.canvas_size)
    throw std::invalid_argument("backbone: canvas is " + std::to_string(cv.pixels.height) + "x" +
                                std::to_string(cv.pixels.width) + ", expected " + std::to_string(cfg_.canvas_size));
}

std::vector<std::uint8_t> ToyBackbone::mask_flags(const QuadrantMaskSpec& mask) const {
  if (mask.grid_rows != cfg_.grid() || mask.grid_cols != cfg_.grid())
    throw std::invalid_argument("backbone: mask grid does not match token grid");
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(cfg_.tokens()), 0);
  for (const TokenPos& t : mask.positions) flags[static_cast<std::size_t>(t.row) * cfg_.grid() + t.col] = 1;
  return flags;
}

namespace {
LogitsGrid to_grid(const Mat& m, int rows, int cols) {
  LogitsGrid g(rows, cols, static_cast<int>(m.cols()));
  std::memcpy(g.data.data(), m.data(), sizeof(double) * g.data.size());
  return g;
}
}  // namespace

LogitsGrid ToyBackbone::tokenizer_logits(const Canvas& cv) const {
  check_canvas(cv);
  return to_grid(tokenizer_.code_logits(tokenizer_.encode(patchify(cv.pixels, cfg_.patch))), cfg_.grid(), cfg_.grid());
}

LogitsGrid ToyBackbone::predict_logits(const Canvas& cv, const QuadrantMaskSpec& mask) const {
  check_canvas(cv);
  const auto flags = mask_flags(mask);
  return to_grid(predictor_.forward(patchify(cv.pixels, cfg_.patch), flags), cfg_.grid(), cfg_.grid());
}

Image ToyBackbone::predict_logits_vjp(const Canvas& cv, const QuadrantMaskSpec& mask,
                                      const std::function<LogitsGrid(const LogitsGrid&)>& upstream) const {
  check_canvas(cv);
  const auto flags = mask_flags(mask);
  PredictorNet::Cache cache;
  const Mat logits = predictor_.forward(patchify(cv.pixels, cfg_.patch), flags, &cache);
  const LogitsGrid dl = upstream(to_grid(logits, cfg_.grid(), cfg_.grid()));
  if (dl.rows != cfg_.grid() || dl.cols != cfg_.grid() || dl.vocab != cfg_.vocab)
    throw std::invalid_argument("predict_logits_vjp: upstream gradient has the wrong shape");
  const Mat dlm = nn::ConstMatMap(dl.data.data(), cfg_.tokens(), cfg_.vocab);
  const Mat dp = predictor_.backward(cache, dlm, {}, true);
  return unpatchify(dp, cfg_.grid(), cfg_.grid(), cfg_.patch);
}

Image ToyBackbone::decode(const TokenGrid& z) const {
  if (z.rows != cfg_.grid() || z.cols != cfg_.grid())
    throw std::invalid_argument("decode: token grid does not match backbone grid");
  const Mat out = tokenizer_.decode_vectors(tokenizer_.gather_codes(z.tokens));
  return unpatchify(out, cfg_.grid(), cfg_.grid(), cfg_.patch);
}

void ToyBackbone::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ToyBackbone::save: cannot open " + path.string());
  bin::put_magic(out, "IMBB");
  bin::put<std::uint32_t>(out, 1);
  for (int v : {cfg_.canvas_size, cfg_.patch, cfg_.vocab, cfg_.code_dim, cfg_.tokenizer_hidden, cfg_.model_dim,
                cfg_.heads, cfg_.layers, cfg_.mlp_hidden})
    bin::put<std::int32_t>(out, v);
  for (const auto* params : {&tokenizer_.params(), &predictor_.params()}) {
    bin::put<std::uint64_t>(out, params->size());
    for (double v : *params) bin::put<double>(out, v);
  }
  bin::put_string(out, fingerprint_);
  if (!out) throw std::runtime_error("ToyBackbone::save: write failed for " + path.string());
}

ToyBackbone ToyBackbone::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ToyBackbone::load: cannot open " + path.string());
  bin::expect_magic(in, "IMBB");
  if (bin::get<std::uint32_t>(in) != 1) throw std::runtime_error("ToyBackbone::load: unsupported version");
  BackboneConfig cfg;
  for (int* v : {&cfg.canvas_size, &cfg.patch, &cfg.vocab, &cfg.code_dim, &cfg.tokenizer_hidden, &cfg.model_dim,
                 &cfg.heads, &cfg.layers, &cfg.mlp_hidden})
    *v = bin::get<std::int32_t>(in);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("ToyBackbone::load: corrupt config: ") + e.what());
  }
  TokenizerNet tok(cfg);
  PredictorNet pred(cfg);
  for (auto* params : {&tok.params(), &pred.params()}) {
    if (bin::get<std::uint64_t>(in) != params->size())
      throw std::runtime_error("ToyBackbone::load: parameter count does not match config");
    for (double& v : *params) v = bin::get<double>(in);
  }
  const std::string stored = bin::get_string(in, 256);
  ToyBackbone bb(std::move(tok), std::move(pred));
  if (bb.fingerprint() != stored)
    throw std::runtime_error("ToyBackbone::load: fingerprint mismatch (stored " + stored + ", computed " +
                             bb.fingerprint() + ")");
  return bb;
}

FeatureVector TokenizerFeatureExtractor::extract(const Image& img) const {
  if (img.empty()) throw std::invalid_argument("extract_features: empty image");
  const int cell = bb_.cell_size();
  const Mat z = bb_.tokenizer().encode(patchify(resize_bilinear(img, cell, cell), bb_.config().patch));
  return normalized(std::vector<double>(z.data(), z.data() + z.size()));
}

}  // namespace inmemo
