#include "inmemo/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "inmemo/binary_io.hpp"
#include "inmemo/util.hpp"

namespace inmemo {

std::vector<std::uint8_t> border_mask(int resolution, int pad) {
  if (resolution < 1 || pad < 1) throw std::invalid_argument("border_mask: resolution and pad must be >= 1");
  const int r = resolution;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(r) * r, 0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j)
      mask[static_cast<std::size_t>(i) * r + j] = std::min({i, j, r - 1 - i, r - 1 - j}) < pad ? 1 : 0;
  return mask;
}

long long param_count(int resolution, int pad) {
  if (resolution < 1 || pad < 1) throw std::invalid_argument("param_count: resolution and pad must be >= 1");
  const long long r = resolution;
  const long long inner = std::max<long long>(r - 2LL * pad, 0);
  return 3 * (r * r - inner * inner);
}

int default_pad(int resolution) { return std::max(1, static_cast<int>(std::lround(30.0 / 224.0 * resolution))); }

PromptParams init_prompt(int resolution, int pad, InitScheme scheme, double sigma, std::uint64_t seed,
                         double delta) {
  const std::vector<std::uint8_t> mask = border_mask(resolution, pad);
  PromptParams p;
  p.resolution = resolution;
  p.pad = pad;
  p.delta = delta;
  p.scheme = scheme;
  p.sigma = scheme == InitScheme::gaussian ? sigma : 0.0;
  p.seed = seed;
  p.theta = Image(resolution, resolution, 0.0);
  if (scheme == InitScheme::gaussian) {
    if (!(sigma > 0.0)) throw std::invalid_argument("init_prompt: gaussian scheme needs sigma > 0");
    std::mt19937_64 rng(derive_seed(seed, "prompt-init"));
    std::normal_distribution<double> n(0.0, sigma);
    for (std::size_t k = 0; k < mask.size(); ++k)
      if (mask[k])
        for (int ch = 0; ch < 3; ++ch) p.theta.data[k * 3 + ch] = n(rng);
  }
  return p;
}

bool satisfies_support(const PromptParams& prompt) {
  if (prompt.theta.height != prompt.resolution || prompt.theta.width != prompt.resolution) return false;
  const std::vector<std::uint8_t> mask = border_mask(prompt.resolution, prompt.pad);
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (!mask[k])
      for (int ch = 0; ch < 3; ++ch)
        if (prompt.theta.data[k * 3 + ch] != 0.0) return false;
  return true;
}

std::string PromptParams::fingerprint() const {
  return sha256_hex_of(std::span<const double>(theta.data));
}

Image enhance(const Image& img, const PromptParams& prompt) {
  if (img.height != prompt.resolution || img.width != prompt.resolution)
    throw std::invalid_argument("enhance: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                ", prompt resolution is " + std::to_string(prompt.resolution));
  Image out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += prompt.delta * prompt.theta.data[i];
  return out;
}

std::string Placement::name() const {
  if (input && label && query) return "I,L&Q";
  std::string s;
  auto add = [&](const char* part) {
    if (!s.empty()) s += "&";
    s += part;
  };
  if (input) add("I");
  if (label) add("L");
  if (query) add("Q");
  return s.empty() ? "none" : s;
}

Placement Placement::parse(const std::string& name) {
  Placement p;
  if (name == "none") return p;
  for (char c : name) {
    switch (c) {
      case 'I': p.input = true; break;
      case 'L': p.label = true; break;
      case 'Q': p.query = true; break;
      case '&':
      case ',': break;
      default: throw std::invalid_argument("unknown placement: " + name);
    }
  }
  if (p.empty()) throw std::invalid_argument("unknown placement: " + name);
  return p;
}

std::vector<Placement> placement_variants() {
  return {
      Placement{true, false, false},  // I
      Placement{false, false, true},  // Q
      Placement{true, false, true},   // I&Q
      Placement{true, true, false},   // I&L
      Placement{true, true, true},    // I,L&Q
  };
}

PlacedImages apply_placement(const Image& x, const Image& y, const Image& x_query, const PromptParams& prompt,
                             const Placement& placement) {
  if (placement.empty()) throw std::invalid_argument("apply_placement: empty placement");
  return {placement.input ? enhance(x, prompt) : x, placement.label ? enhance(y, prompt) : y,
          placement.query ? enhance(x_query, prompt) : x_query};
}

namespace {
const char* scheme_name(InitScheme s) { return s == InitScheme::zeros ? "zeros" : "gaussian"; }
InitScheme scheme_from(const std::string& s) {
  if (s == "zeros") return InitScheme::zeros;
  if (s == "gaussian") return InitScheme::gaussian;
  throw std::runtime_error("unknown init scheme: " + s);
}
}  // namespace

void save_prompt(const PromptParams& prompt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_prompt: cannot open " + path.string());
  bin::put_magic(out, "IMPR");
  bin::put<std::uint32_t>(out, 1);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(prompt.resolution));
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(prompt.pad));
  bin::put<double>(out, prompt.delta);
  bin::put_string(out, scheme_name(prompt.scheme));
  bin::put<double>(out, prompt.sigma);
  bin::put<std::uint64_t>(out, prompt.seed);
  bin::put_string(out, prompt.backbone_fingerprint);
  for (double v : prompt.theta.data) bin::put<float>(out, static_cast<float>(v));
  if (!out) throw std::runtime_error("save_prompt: write failed for " + path.string());
}

PromptParams load_prompt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_prompt: cannot open " + path.string());
  bin::expect_magic(in, "IMPR");
  if (bin::get<std::uint32_t>(in) != 1) throw std::runtime_error("load_prompt: unsupported version");
  PromptParams p;
  p.resolution = static_cast<int>(bin::get<std::uint32_t>(in));
  p.pad = static_cast<int>(bin::get<std::uint32_t>(in));
  if (p.resolution < 1 || p.resolution > 4096 || p.pad < 1)
    throw std::runtime_error("load_prompt: corrupt header in " + path.string());
  p.delta = bin::get<double>(in);
  p.scheme = scheme_from(bin::get_string(in));
  p.sigma = bin::get<double>(in);
  p.seed = bin::get<std::uint64_t>(in);
  p.backbone_fingerprint = bin::get_string(in);
  p.theta = Image(p.resolution, p.resolution);
  for (double& v : p.theta.data) v = bin::get<float>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("load_prompt: trailing bytes in " + path.string());
  if (!satisfies_support(p))
    throw std::runtime_error("load_prompt: non-zero values outside the border band in " + path.string());
  return p;
}

}  // namespace inmemo
