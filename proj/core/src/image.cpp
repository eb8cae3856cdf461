#include "inmemo/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace inmemo {

Image::Image(int h, int w, double fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w * kChannels, fill) {
  if (h < 0 || w < 0) throw std::invalid_argument("Image: negative dimensions");
}

ResizePlan::ResizePlan(int src_h, int src_w, int dst_h, int dst_w)
    : src_h_(src_h), src_w_(src_w), dst_h_(dst_h), dst_w_(dst_w) {
  if (src_h < 1 || src_w < 1 || dst_h < 1 || dst_w < 1)
    throw std::invalid_argument("ResizePlan: dimensions must be positive");
  rows_ = taps(src_h, dst_h);
  cols_ = taps(src_w, dst_w);
}

std::vector<ResizePlan::Tap> ResizePlan::taps(int src, int dst) {
  std::vector<Tap> out(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    const double f = s - i0;
    out[i] = {i0, i1, 1.0 - f, f};
  }
  return out;
}

Image ResizePlan::apply(const Image& src) const {
  if (src.height != src_h_ || src.width != src_w_)
    throw std::invalid_argument("ResizePlan::apply: source size mismatch");
  if (src_h_ == dst_h_ && src_w_ == dst_w_) return src;
  Image dst(dst_h_, dst_w_);
  for (int r = 0; r < dst_h_; ++r) {
    const Tap& tr = rows_[r];
    for (int c = 0; c < dst_w_; ++c) {
      const Tap& tc = cols_[c];
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        const double top = tc.w0 * src.at(tr.i0, tc.i0, ch) + tc.w1 * src.at(tr.i0, tc.i1, ch);
        const double bot = tc.w0 * src.at(tr.i1, tc.i0, ch) + tc.w1 * src.at(tr.i1, tc.i1, ch);
        dst.at(r, c, ch) = tr.w0 * top + tr.w1 * bot;
      }
    }
  }
  return dst;
}

void ResizePlan::accumulate_adjoint(const Image& grad_dst, Image& grad_src) const {
  if (grad_dst.height != dst_h_ || grad_dst.width != dst_w_ || grad_src.height != src_h_ ||
      grad_src.width != src_w_)
    throw std::invalid_argument("ResizePlan::accumulate_adjoint: size mismatch");
  if (src_h_ == dst_h_ && src_w_ == dst_w_) {
    for (std::size_t i = 0; i < grad_src.data.size(); ++i) grad_src.data[i] += grad_dst.data[i];
    return;
  }
  for (int r = 0; r < dst_h_; ++r) {
    const Tap& tr = rows_[r];
    for (int c = 0; c < dst_w_; ++c) {
      const Tap& tc = cols_[c];
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        const double g = grad_dst.at(r, c, ch);
        grad_src.at(tr.i0, tc.i0, ch) += tr.w0 * tc.w0 * g;
        grad_src.at(tr.i0, tc.i1, ch) += tr.w0 * tc.w1 * g;
        grad_src.at(tr.i1, tc.i0, ch) += tr.w1 * tc.w0 * g;
        grad_src.at(tr.i1, tc.i1, ch) += tr.w1 * tc.w1 * g;
      }
    }
  }
}

Image resize_bilinear(const Image& src, int h, int w) {
  if (src.height == h && src.width == w) return src;
  return ResizePlan(src.height, src.width, h, w).apply(src);
}

void quantize_8bit(Image& img) {
  for (double& v : img.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

std::vector<double> luminance(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.height) * img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out[static_cast<std::size_t>(r) * img.width + c] =
          (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / 3.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));

  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw std::runtime_error("write_png: " + path.string() + ": " + pi.message);
}

Image read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw std::runtime_error("read_png: " + path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw std::runtime_error("read_png: " + path.string() + ": " + pi.message);
  }
  Image img(static_cast<int>(pi.height), static_cast<int>(pi.width));
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace inmemo
