#include "inmemo/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "inmemo/binary_io.hpp"

namespace inmemo {

double FeatureVector::dot(const FeatureVector& other) const {
  if (values.size() != other.values.size()) throw std::invalid_argument("FeatureVector::dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * other.values[i];
  return s;
}

FeatureVector normalized(std::vector<double> raw) {
  double ss = 0.0;
  for (double v : raw) ss += v * v;
  FeatureVector f;
  if (ss == 0.0) {
    f.values.assign(raw.size(), 0.0);
    f.zero = true;
    return f;
  }
  const double norm = std::sqrt(ss);
  for (double& v : raw) v /= norm;
  f.values = std::move(raw);
  return f;
}

FeatureVector DownsampleExtractor::extract(const Image& img) const {
  if (img.empty()) throw std::invalid_argument("extract_features: empty image");
  return normalized(luminance(resize_bilinear(img, grid_, grid_)));
}

FeatureVector extract_features(const Image& img) { return DownsampleExtractor{}.extract(img); }

RetrievalIndex::RetrievalIndex(std::string extractor_tag, std::vector<IndexEntry> entries)
    : tag_(std::move(extractor_tag)), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const IndexEntry& a, const IndexEntry& b) { return a.pair_id < b.pair_id; });
  for (std::size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].pair_id == entries_[i - 1].pair_id)
      throw std::invalid_argument("RetrievalIndex: duplicate pair id " + std::to_string(entries_[i].pair_id));
}

std::uint32_t RetrievalIndex::retrieve(const FeatureVector& query, std::optional<std::uint32_t> exclude) const {
  // Rank is (unflagged, similarity); entries arrive in id order, so strict
  // improvement keeps the smallest id on ties.
  bool found = false;
  bool best_flagged = true;
  double best_sim = -std::numeric_limits<double>::infinity();
  std::uint32_t best_id = 0;
  for (const IndexEntry& e : entries_) {
    if (exclude && e.pair_id == *exclude) continue;
    const double sim = e.feature.zero ? 0.0 : query.dot(e.feature);
    const bool better = !found || (best_flagged && !e.feature.zero) ||
                        (best_flagged == e.feature.zero && sim > best_sim);
    if (better) {
      found = true;
      best_flagged = e.feature.zero;
      best_sim = sim;
      best_id = e.pair_id;
    }
  }
  if (!found) throw std::runtime_error("retrieve: empty support set (every entry excluded)");
  return best_id;
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("RetrievalIndex::save: cannot open " + path.string());
  const std::uint32_t dim = entries_.empty() ? 0 : static_cast<std::uint32_t>(entries_.front().feature.values.size());
  bin::put_magic(out, "IMRX");
  bin::put<std::uint32_t>(out, 1);
  bin::put_string(out, tag_);
  bin::put<std::uint32_t>(out, dim);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) bin::put<std::uint32_t>(out, e.pair_id);
  for (const auto& e : entries_)
    for (double v : e.feature.values) bin::put<float>(out, static_cast<float>(v));
  if (!out) throw std::runtime_error("RetrievalIndex::save: write failed for " + path.string());
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("RetrievalIndex::load: cannot open " + path.string());
  bin::expect_magic(in, "IMRX");
  if (bin::get<std::uint32_t>(in) != 1) throw std::runtime_error("RetrievalIndex::load: unsupported version");
  std::string tag = bin::get_string(in);
  const auto dim = bin::get<std::uint32_t>(in);
  const auto count = bin::get<std::uint32_t>(in);
  std::vector<IndexEntry> entries(count);
  for (auto& e : entries) e.pair_id = bin::get<std::uint32_t>(in);
  for (auto& e : entries) {
    e.feature.values.resize(dim);
    bool any = false;
    for (double& v : e.feature.values) {
      v = bin::get<float>(in);
      any = any || v != 0.0;
    }
    e.feature.zero = !any;
  }
  return RetrievalIndex(std::move(tag), std::move(entries));
}

RetrievalIndex build_index(const Dataset& d, const FeatureExtractor& extractor) {
  if (d.empty()) throw std::invalid_argument("build_index: dataset is empty");
  std::vector<IndexEntry> entries;
  entries.reserve(d.size());
  for (const auto& p : d.pairs) entries.push_back({p.id, extractor.extract(p.input)});
  return RetrievalIndex(extractor.tag(), std::move(entries));
}

std::uint32_t retrieve(const RetrievalIndex& idx, const FeatureExtractor& extractor, const Image& query,
                       std::optional<std::uint32_t> exclude) {
  if (extractor.tag() != idx.extractor_tag())
    throw std::invalid_argument("retrieve: extractor '" + extractor.tag() + "' does not match index built with '" +
                                idx.extractor_tag() + "'");
  return idx.retrieve(extractor.extract(query), exclude);
}

std::uint32_t retrieve(const RetrievalIndex& idx, const Image& query, std::optional<std::uint32_t> exclude) {
  return retrieve(idx, DownsampleExtractor{}, query, exclude);
}

}  // namespace inmemo
