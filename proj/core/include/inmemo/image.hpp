#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace inmemo {

/// H x W x 3 plane of reals, row-major, channel-last. Values nominally lie in
/// [0, 1] but nothing enforces it: prompted images may leave that range.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0);

  static constexpr int kChannels = 3;

  bool empty() const { return data.empty(); }
  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * width + c) * kChannels + ch;
  }
  double& at(int r, int c, int ch) { return data[index(r, c, ch)]; }
  double at(int r, int c, int ch) const { return data[index(r, c, ch)]; }

  bool operator==(const Image&) const = default;
};

/// Bilinear resampling with half-pixel centres (align_corners = false) and
/// edge clamping. Exactly 2x downsampling therefore averages 2x2 blocks.
///
/// The map is linear, so the plan exposes both the forward application and its
/// adjoint; the adjoint carries canvas gradients back onto prompt pixels.
class ResizePlan {
 public:
  ResizePlan(int src_h, int src_w, int dst_h, int dst_w);

  Image apply(const Image& src) const;
  /// Adds A^T * grad_dst into grad_src (grad_src must be src-sized).
  void accumulate_adjoint(const Image& grad_dst, Image& grad_src) const;

  int src_height() const { return src_h_; }
  int src_width() const { return src_w_; }
  int dst_height() const { return dst_h_; }
  int dst_width() const { return dst_w_; }

 private:
  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  static std::vector<Tap> taps(int src, int dst);

  int src_h_, src_w_, dst_h_, dst_w_;
  std::vector<Tap> rows_;
  std::vector<Tap> cols_;
};

Image resize_bilinear(const Image& src, int h, int w);

/// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded to k/255.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Rounds every value to the nearest k/255 after clamping; the exact set of
/// values an 8-bit PNG round trip preserves.
void quantize_8bit(Image& img);

/// Channel-mean luminance plane, row-major.
std::vector<double> luminance(const Image& img);

}  // namespace inmemo
