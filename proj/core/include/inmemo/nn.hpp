#pragma once

// Minimal dense building blocks for the toy backbone: a flat parameter store,
// row-major Eigen views, hand-written forward/backward kernels and Adam.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace inmemo::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

/// Named 2-D parameter blocks packed in one contiguous buffer, in declaration
/// order. Gradients use a buffer with the identical layout.
class ParamStore {
 public:
  struct Slot {
    std::string name;
    std::size_t offset;
    int rows;
    int cols;
  };

  /// Returns the slot index.
  int add(std::string name, int rows, int cols);

  std::size_t size() const { return total_; }
  const std::vector<Slot>& slots() const { return slots_; }
  int find(const std::string& name) const;

  MatMap view(std::span<double> buffer, int slot) const;
  ConstMatMap view(std::span<const double> buffer, int slot) const;
  MatMap view(std::vector<double>& buffer, int slot) const { return view(std::span<double>(buffer), slot); }
  ConstMatMap view(const std::vector<double>& buffer, int slot) const {
    return view(std::span<const double>(buffer), slot);
  }

 private:
  std::vector<Slot> slots_;
  std::size_t total_ = 0;
};

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

/// y = (x - mean) / sqrt(var + eps) * gain + bias, over each row.
Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, LayerNormCache& cache, double eps = 1e-5);
/// Returns dx; accumulates dgain / dbias when non-null.
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Vec& gain, Vec* dgain, Vec* dbias);

/// tanh-approximation GELU and its exact derivative.
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& dy, const Mat& x);

/// Row-wise numerically stable softmax.
void softmax_rows_inplace(Mat& m);

/// Adam with bias correction. `active`, when given, restricts updates to the
/// flagged coordinates; other coordinates and their moments are untouched.
class Adam {
 public:
  Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grads, double lr,
            std::span<const std::uint8_t> active = {});

  long long steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

/// Scales grads so the global l2 norm is at most max_norm; returns the norm.
double clip_global_norm(std::span<double> grads, double max_norm);

}  // namespace inmemo::nn
