#include "inmemo/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace inmemo::nn {

int ParamStore::add(std::string name, int rows, int cols) {
  slots_.push_back({std::move(name), total_, rows, cols});
  total_ += static_cast<std::size_t>(rows) * cols;
  return static_cast<int>(slots_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return static_cast<int>(i);
  throw std::out_of_range("ParamStore: no slot named " + name);
}

MatMap ParamStore::view(std::span<double> buffer, int slot) const {
  const Slot& s = slots_[slot];
  return MatMap(buffer.data() + s.offset, s.rows, s.cols);
}

ConstMatMap ParamStore::view(std::span<const double> buffer, int slot) const {
  const Slot& s = slots_[slot];
  return ConstMatMap(buffer.data() + s.offset, s.rows, s.cols);
}

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, LayerNormCache& cache, double eps) {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  Mat y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + eps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(gain) + bias;
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Vec& gain, Vec* dgain, Vec* dbias) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  if (dgain) *dgain += dy.cwiseProduct(cache.xhat).colwise().sum();
  if (dbias) *dbias += dy.colwise().sum();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec dxhat = dy.row(i).cwiseProduct(gain);
    const double mean_d = dxhat.mean();
    const double mean_dx = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = (dxhat.array() - mean_d - cache.xhat.row(i).array() * mean_dx) * cache.rstd(i);
  }
  return dx;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
}

Mat gelu_backward(const Mat& dy, const Mat& x) {
  Mat d(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    d.data()[i] = dy.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
  }
  return d;
}

void softmax_rows_inplace(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr,
                std::span<const std::uint8_t> active) {
  if (params.size() != m_.size() || grads.size() != m_.size() || (!active.empty() && active.size() != m_.size()))
    throw std::invalid_argument("Adam::step: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
  }
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  double ss = 0.0;
  for (double g : grads) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

}  // namespace inmemo::nn
