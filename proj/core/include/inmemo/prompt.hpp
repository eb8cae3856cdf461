#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "inmemo/image.hpp"

namespace inmemo {

enum class InitScheme { zeros, gaussian };

/// Learnable border perturbation. `theta` is an R x R x 3 plane that is
/// exactly zero outside the band of width `pad` along the image edges.
struct PromptParams {
  int resolution = 64;
  int pad = 8;
  double delta = 1.0;
  Image theta;
  InitScheme scheme = InitScheme::zeros;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  /// Fingerprint of the backbone the prompt was trained against (may be empty).
  std::string backbone_fingerprint;

  std::string fingerprint() const;
  bool operator==(const PromptParams&) const = default;
};

/// mask(i, j) = 1 iff min(i, j, R-1-i, R-1-j) < p. Row-major R x R.
std::vector<std::uint8_t> border_mask(int resolution, int pad);

/// Trainable scalars: 3 * (R^2 - max(R - 2p, 0)^2).
long long param_count(int resolution, int pad);

/// Default toy padding: the 30-of-224 border ratio scaled to `resolution`.
int default_pad(int resolution);

PromptParams init_prompt(int resolution, int pad, InitScheme scheme, double sigma, std::uint64_t seed,
                         double delta = 1.0);

/// True iff every entry off the border band is exactly zero.
bool satisfies_support(const PromptParams& prompt);

/// x' = x + delta * theta, without clamping.
Image enhance(const Image& img, const PromptParams& prompt);

/// Which canvas images receive the prompt: in-context input (I), in-context
/// label (L) and query (Q).
struct Placement {
  bool input = false;
  bool label = false;
  bool query = false;

  bool empty() const { return !input && !label && !query; }
  bool operator==(const Placement&) const = default;

  static Placement canonical() { return {true, true, false}; }
  /// Names as used in reports: I, L, Q, I&L, I&Q, L&Q, I,L&Q.
  std::string name() const;
  static Placement parse(const std::string& name);
};

/// The placement ablation rows, in report order.
std::vector<Placement> placement_variants();

struct PlacedImages {
  Image input;
  Image label;
  Image query;
};

PlacedImages apply_placement(const Image& x, const Image& y, const Image& x_query, const PromptParams& prompt,
                             const Placement& placement);

/// Header {R, p, delta, scheme, sigma, seed, backbone fingerprint} followed by
/// the full plane as little-endian float32, row-major, channel-last.
void save_prompt(const PromptParams& prompt, const std::filesystem::path& path);
PromptParams load_prompt(const std::filesystem::path& path);

}  // namespace inmemo
