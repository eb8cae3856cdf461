#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "inmemo/data_synth.hpp"
#include "inmemo/image.hpp"

namespace inmemo {

/// Unit-norm feature, or the zero vector with `zero` set when the input had
/// no energy.
struct FeatureVector {
  std::vector<double> values;
  bool zero = false;

  double dot(const FeatureVector& other) const;
  bool operator==(const FeatureVector&) const = default;
};

FeatureVector normalized(std::vector<double> raw);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string tag() const = 0;
  virtual FeatureVector extract(const Image& img) const = 0;
};

/// Training-free default: bilinear downsample to grid x grid, grayscale,
/// flatten, l2-normalise. Homogeneous of degree one before normalisation, so
/// scaling an image by c > 0 does not change its feature.
class DownsampleExtractor final : public FeatureExtractor {
 public:
  explicit DownsampleExtractor(int grid = 16) : grid_(grid) {}
  std::string tag() const override { return "downsample-gray-" + std::to_string(grid_); }
  FeatureVector extract(const Image& img) const override;

 private:
  int grid_;
};

FeatureVector extract_features(const Image& img);

struct IndexEntry {
  std::uint32_t pair_id;
  FeatureVector feature;
};

/// Entries sorted by pair id; immutable once built.
class RetrievalIndex {
 public:
  RetrievalIndex(std::string extractor_tag, std::vector<IndexEntry> entries);

  const std::string& extractor_tag() const { return tag_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Highest cosine similarity to the query feature among non-excluded
  /// entries; ties go to the smallest pair id. Zero-flagged entries only win
  /// when no unflagged entry remains.
  std::uint32_t retrieve(const FeatureVector& query, std::optional<std::uint32_t> exclude = std::nullopt) const;

  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);

  bool operator==(const RetrievalIndex&) const = default;

 private:
  std::string tag_;
  std::vector<IndexEntry> entries_;
};

RetrievalIndex build_index(const Dataset& d, const FeatureExtractor& extractor);

std::uint32_t retrieve(const RetrievalIndex& idx, const FeatureExtractor& extractor, const Image& query,
                       std::optional<std::uint32_t> exclude = std::nullopt);

/// Retrieval against an index built with the default extractor.
std::uint32_t retrieve(const RetrievalIndex& idx, const Image& query,
                       std::optional<std::uint32_t> exclude = std::nullopt);

}  // namespace inmemo
