#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "inmemo/canvas.hpp"
#include "inmemo/data_synth.hpp"
#include "inmemo/image.hpp"
#include "inmemo/nn.hpp"
#include "inmemo/retriever.hpp"

namespace inmemo {

/// rows x cols grid of codebook indices.
struct TokenGrid {
  int rows = 0;
  int cols = 0;
  std::vector<int> tokens;

  int at(int r, int c) const { return tokens[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const TokenGrid&) const = default;
};

/// rows x cols x vocab real plane; softmax over the last axis gives token
/// probabilities per position.
struct LogitsGrid {
  int rows = 0;
  int cols = 0;
  int vocab = 0;
  std::vector<double> data;

  LogitsGrid() = default;
  LogitsGrid(int r, int c, int v) : rows(r), cols(c), vocab(v), data(static_cast<std::size_t>(r) * c * v, 0.0) {}

  std::span<double> at(int r, int c) {
    return {data.data() + (static_cast<std::size_t>(r) * cols + c) * vocab, static_cast<std::size_t>(vocab)};
  }
  std::span<const double> at(int r, int c) const {
    return {data.data() + (static_cast<std::size_t>(r) * cols + c) * vocab, static_cast<std::size_t>(vocab)};
  }
  bool operator==(const LogitsGrid&) const = default;
};

/// Per-position argmax; ties resolve to the smallest token index.
TokenGrid argmax_tokens(const LogitsGrid& logits);

/// Frozen (E, F, D) triple. Implementations are immutable once constructed,
/// so one instance can be shared by any number of concurrent readers.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual int canvas_size() const = 0;
  virtual int grid_rows() const = 0;
  virtual int grid_cols() const = 0;
  virtual int vocab_size() const = 0;
  int cell_size() const { return canvas_size() / 2; }

  /// F: tokenizer posterior logits for every position of a canvas.
  virtual LogitsGrid tokenizer_logits(const Canvas& cv) const = 0;
  /// E: token logits for a canvas whose masked positions are hidden from the
  /// model (their pixels never reach it).
  virtual LogitsGrid predict_logits(const Canvas& cv, const QuadrantMaskSpec& mask) const = 0;
  /// Runs E, hands the logits to `upstream` which returns dLoss/dLogits, and
  /// returns dLoss/dCanvas. Masked pixels receive exactly zero gradient.
  virtual Image predict_logits_vjp(const Canvas& cv, const QuadrantMaskSpec& mask,
                                   const std::function<LogitsGrid(const LogitsGrid&)>& upstream) const = 0;
  /// D: canvas-sized image from a token grid.
  virtual Image decode(const TokenGrid& z) const = 0;
  virtual std::string fingerprint() const = 0;
};

TokenGrid tokenize(const Backbone& bb, const Canvas& cv);
LogitsGrid predict_logits(const Backbone& bb, const Canvas& cv, const QuadrantMaskSpec& mask);
TokenGrid predict_tokens(const Backbone& bb, const Canvas& cv, const QuadrantMaskSpec& mask);
Image decode(const Backbone& bb, const TokenGrid& z);
QuadrantMaskSpec backbone_mask(const Backbone& bb);

// ---------------------------------------------------------------------------
// Toy backbone
// ---------------------------------------------------------------------------

struct BackboneConfig {
  int canvas_size = 64;
  int patch = 4;
  int vocab = 128;
  int code_dim = 32;
  int tokenizer_hidden = 64;
  int model_dim = 64;
  int heads = 4;
  int layers = 2;
  int mlp_hidden = 128;

  int grid() const { return canvas_size / patch; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * 3; }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Canvas -> (tokens x patch_dim) matrix; row t is patch t in row-major grid
/// order, each patch flattened as (row, col, channel).
nn::Mat patchify(const Image& img, int patch);
Image unpatchify(const nn::Mat& patches, int grid_rows, int grid_cols, int patch);

/// Per-patch vector-quantised autoencoder: the F encoder (two-layer MLP on
/// each non-overlapping patch, i.e. a stride-`patch` convolution), a codebook
/// and the D decoder (two-layer MLP back to patch pixels).
///
/// Parameter order: enc.w1, enc.b1, enc.w2, enc.b2, codebook, dec.w1, dec.b1,
/// dec.w2, dec.b2.
class TokenizerNet {
 public:
  explicit TokenizerNet(const BackboneConfig& cfg);

  void init(std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const nn::ParamStore& store() const { return store_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  struct EncodeCache {
    nn::Mat centered;
    nn::Mat hidden_pre;
    nn::Mat hidden;
  };
  nn::Mat encode(const nn::Mat& patches, EncodeCache* cache = nullptr) const;
  /// -||z - c_w||^2 for every row z and code w.
  nn::Mat code_logits(const nn::Mat& z) const;
  std::vector<int> nearest_codes(const nn::Mat& z) const;
  nn::Mat gather_codes(const std::vector<int>& ids) const;

  struct DecodeCache {
    nn::Mat input;
    nn::Mat hidden_pre;
    nn::Mat hidden;
  };
  nn::Mat decode_vectors(const nn::Mat& codes, DecodeCache* cache = nullptr) const;

  /// Backprop through the decoder; accumulates into grads, returns d(codes).
  nn::Mat decode_backward(const DecodeCache& cache, const nn::Mat& dout, std::span<double> grads) const;
  /// Backprop through the encoder; accumulates into grads.
  void encode_backward(const EncodeCache& cache, const nn::Mat& dz, std::span<double> grads) const;

 private:
  BackboneConfig cfg_;
  nn::ParamStore store_;
  std::vector<double> params_;
  int enc_w1_, enc_b1_, enc_w2_, enc_b2_, codebook_, dec_w1_, dec_b1_, dec_w2_, dec_b2_;
};

/// E: patch embedding + learned positions, a learned mask embedding that
/// replaces masked positions, pre-LN transformer blocks, linear token head.
///
/// Parameter order: embed.w, embed.b, pos, mask; per block ln1.g, ln1.b,
/// qkv.w, qkv.b, proj.w, proj.b, ln2.g, ln2.b, fc1.w, fc1.b, fc2.w, fc2.b;
/// then lnf.g, lnf.b, head.w, head.b.
class PredictorNet {
 public:
  explicit PredictorNet(const BackboneConfig& cfg);

  void init(std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const nn::ParamStore& store() const { return store_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  struct BlockCache {
    nn::Mat x_in;
    nn::LayerNormCache ln1;
    nn::Mat a;
    nn::Mat qkv;
    std::vector<nn::Mat> attn;
    nn::Mat o;
    nn::Mat x_mid;
    nn::LayerNormCache ln2;
    nn::Mat b;
    nn::Mat h_pre;
    nn::Mat h;
  };
  struct Cache {
    nn::Mat centered;
    std::vector<std::uint8_t> masked;
    std::vector<BlockCache> blocks;
    nn::Mat x_out;
    nn::LayerNormCache lnf;
    nn::Mat af;
  };

  /// patches: tokens x patch_dim; masked: per-token flag.
  nn::Mat forward(const nn::Mat& patches, std::span<const std::uint8_t> masked, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads` when non-empty and returns
  /// d(patches) when `want_input_grad` (masked rows are zero).
  nn::Mat backward(const Cache& cache, const nn::Mat& dlogits, std::span<double> grads, bool want_input_grad) const;

 private:
  struct BlockSlots {
    int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  BackboneConfig cfg_;
  nn::ParamStore store_;
  std::vector<double> params_;
  int embed_w_, embed_b_, pos_, mask_;
  std::vector<BlockSlots> blocks_;
  int lnf_g_, lnf_b_, head_w_, head_b_;
};

class ToyBackbone final : public Backbone {
 public:
  /// Freezes the given networks; the fingerprint is computed once here.
  ToyBackbone(TokenizerNet tokenizer, PredictorNet predictor);

  int canvas_size() const override { return cfg_.canvas_size; }
  int grid_rows() const override { return cfg_.grid(); }
  int grid_cols() const override { return cfg_.grid(); }
  int vocab_size() const override { return cfg_.vocab; }

  LogitsGrid tokenizer_logits(const Canvas& cv) const override;
  LogitsGrid predict_logits(const Canvas& cv, const QuadrantMaskSpec& mask) const override;
  Image predict_logits_vjp(const Canvas& cv, const QuadrantMaskSpec& mask,
                           const std::function<LogitsGrid(const LogitsGrid&)>& upstream) const override;
  Image decode(const TokenGrid& z) const override;
  std::string fingerprint() const override { return fingerprint_; }

  /// Recomputes the digest from the current parameters.
  std::string compute_fingerprint() const;

  const BackboneConfig& config() const { return cfg_; }
  const TokenizerNet& tokenizer() const { return tokenizer_; }
  const PredictorNet& predictor() const { return predictor_; }

  /// Versioned header, config, tokenizer then predictor parameters as
  /// little-endian float64 in their documented slot order, then the
  /// fingerprint.
  void save(const std::filesystem::path& path) const;
  /// Verifies the stored fingerprint against the loaded parameters.
  static ToyBackbone load(const std::filesystem::path& path);

 private:
  void check_canvas(const Canvas& cv) const;
  std::vector<std::uint8_t> mask_flags(const QuadrantMaskSpec& mask) const;

  BackboneConfig cfg_;
  TokenizerNet tokenizer_;
  PredictorNet predictor_;
  std::string fingerprint_;
};

/// Feature extractor over the tokenizer's pre-quantisation encodings of the
/// image resized to one canvas cell.
class TokenizerFeatureExtractor final : public FeatureExtractor {
 public:
  explicit TokenizerFeatureExtractor(const ToyBackbone& bb) : bb_(bb) {}
  std::string tag() const override { return "tokenizer-features-" + bb_.fingerprint().substr(0, 16); }
  FeatureVector extract(const Image& img) const override;

 private:
  const ToyBackbone& bb_;
};

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

/// Label renderings the backbone is pretrained to complete in context. The
/// in-context pair and the query always share one rendering.
enum class CanvasTask { segmentation, box, inverted, identity };

Image render_task_label(const TaskPair& pair, CanvasTask task);

struct PretrainConfig {
  BackboneConfig model;

  int tokenizer_steps = 1500;
  int tokenizer_batch = 512;
  double tokenizer_lr = 2e-3;
  double commitment = 0.25;
  int dead_code_interval = 100;

  int predictor_steps = 3000;
  int predictor_batch = 16;
  double predictor_lr = 1e-3;
  int warmup_steps = 100;
  double grad_clip = 1.0;

  /// Sampling weights for segmentation, box, inverted, identity canvases.
  std::array<double, 4> task_weights{1.0, 1.0, 1.0, 1.0};

  /// Held-out canvases used to measure reconstruction after pretraining.
  int holdout_canvases = 64;
  double recon_tol = 0.1;
  int workers = 0;
};

struct PretrainReport {
  double tokenizer_final_loss = 0;
  double predictor_final_loss = 0;
  double holdout_recon_mae = 0;
  int codes_in_use = 0;
};

/// Random pretraining canvas: a task, an in-context pair and a distinct query
/// pair drawn from `data`, composed with the query label in the bottom-right.
Canvas sample_pretrain_canvas(const Dataset& data, const PretrainConfig& cfg, std::mt19937_64& rng);

/// Trains the tokenizer, then E on masked canvases, then freezes. Throws on
/// non-finite losses. Deterministic in (data, cfg, seed).
ToyBackbone pretrain_backbone(const Dataset& data, const PretrainConfig& cfg, std::uint64_t seed,
                              PretrainReport* report = nullptr,
                              const std::function<void(const std::string&)>& log = {});

/// Mean absolute error of D(argmax F(c)) against c over the given canvases.
double reconstruction_mae(const Backbone& bb, std::span<const Canvas> canvases);

}  // namespace inmemo
