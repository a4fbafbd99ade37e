#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "spfann/page_store.hpp"
#include "spfann/types.hpp"

namespace spf {

inline constexpr int kRangeBuckets = 256;
inline constexpr int kQuantiles = 1000;

// Inverted label index. Posting lists live on disk, each starting on a page
// boundary; the directory (offset, count) stays in memory.
class LabelIndex {
 public:
  struct Entry {
    std::uint64_t offset = 0;  // byte offset in the postings file
    std::uint32_t count = 0;
  };

  static LabelIndex open(const std::filesystem::path& path);

  // Ascending ids carrying `label`; empty for unknown labels.
  std::vector<NodeId> lookup_postings(LabelId label, IoCounters& ctr) const;
  // Pages lookup_postings would read, without reading them.
  std::uint64_t posting_pages(LabelId label) const;
  std::uint32_t frequency(LabelId label) const;
  std::uint32_t vocab_size() const { return static_cast<std::uint32_t>(directory_.size()); }
  std::size_t memory_bytes() const { return directory_.size() * sizeof(Entry); }

 private:
  PageFile file_;
  std::vector<Entry> directory_;
};

// One 32-bit Bloom filter per vector over its label set.
class VectorBloom {
 public:
  static constexpr int kBits = 32;

  VectorBloom() = default;
  VectorBloom(std::size_t n, int k_hashes, std::uint64_t seed)
      : words_(n, 0), k_(k_hashes), seed_(seed) {}

  void insert(NodeId v, LabelId label);
  bool might_contain(NodeId v, LabelId label) const;

  std::size_t size() const { return words_.size(); }
  int k_hashes() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const std::uint32_t> words() const { return words_; }
  std::size_t memory_bytes() const { return words_.size() * sizeof(std::uint32_t); }

  void save(const std::filesystem::path& path) const;
  static VectorBloom load(const std::filesystem::path& path);

 private:
  std::uint32_t mask(NodeId v, LabelId label) const;

  std::vector<std::uint32_t> words_;
  int k_ = 2;
  std::uint64_t seed_ = 0;
};

// Analytic false-positive probability of a k-hash, m-bit filter holding n keys.
double bloom_false_positive_rate(double n_keys, int m_bits = VectorBloom::kBits, int k_hashes = 2);

// Range attribute: (id, value) pairs sorted by value on disk; a 1-byte bucket
// code per vector, 257 equal-frequency bounds and a 1000-quantile summary in
// memory.
class RangeIndex {
 public:
  struct RankSpan {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
  };

  static RangeIndex open(const std::filesystem::path& pairs_path,
                         const std::filesystem::path& buckets_path);

  // Ids with value in [l, r), ascending by id.
  std::vector<NodeId> scan_range(float l, float r, IoCounters& ctr) const;
  // Pages scan_range(l, r) reads.
  std::uint64_t scan_pages(float l, float r) const;

  std::uint8_t bucket_of(NodeId v) const { return codes_[v]; }
  // Buckets whose value interval intersects [l, r).
  std::bitset<kRangeBuckets> overlapping_buckets(float l, float r) const;
  double selectivity_from_quantiles(float l, float r) const;
  // Fraction of the corpus in buckets overlapping [l, r), at 1/256 per bucket.
  double bucket_fraction(float l, float r) const;

  std::uint32_t size() const { return n_; }
  std::span<const float> bounds() const { return bounds_; }
  std::span<const float> quantiles() const { return quantiles_; }
  std::span<const std::uint8_t> codes() const { return codes_; }
  std::size_t memory_bytes() const {
    return codes_.size() + bounds_.size() * sizeof(float) + quantiles_.size() * sizeof(float);
  }

 private:
  RankSpan candidate_ranks(float l, float r) const;
  double cdf(float x) const;

  PageFile file_;
  std::uint32_t n_ = 0;
  std::vector<std::uint8_t> codes_;
  std::array<float, kRangeBuckets + 1> bounds_{};
  std::vector<float> quantiles_;
};

struct LabelStats {
  std::uint32_t N = 0;
  std::vector<std::uint32_t> frequency;
  double mean_labels_per_vector = 0.0;

  double selectivity(LabelId label) const {
    if (N == 0 || label >= frequency.size()) return 0.0;
    return static_cast<double>(frequency[label]) / N;
  }
  std::size_t memory_bytes() const { return frequency.size() * sizeof(std::uint32_t); }
};

struct AttrIndexOptions {
  int bloom_hashes = 2;
};

// Everything filters and estimators need about the attributes.
class AttributeIndexSet {
 public:
  static AttributeIndexSet open(const std::filesystem::path& dir);

  const LabelIndex& labels() const { return labels_; }
  const VectorBloom& bloom() const { return bloom_; }
  const RangeIndex& range() const { return range_; }
  const LabelStats& stats() const { return stats_; }
  std::uint32_t size() const { return stats_.N; }

  // Bytes held in memory by the probabilistic filters and summaries.
  std::size_t memory_bytes() const {
    return bloom_.memory_bytes() + range_.memory_bytes() + labels_.memory_bytes() + stats_.memory_bytes();
  }

 private:
  LabelIndex labels_;
  VectorBloom bloom_;
  RangeIndex range_;
  LabelStats stats_;
};

// Writes labels.spf, range.spf, bloom.spf and buckets.spf into `dir`.
void build_attr_indexes(std::span<const AttrMap> attrs, std::uint32_t vocab_size,
                        std::uint64_t seed, const std::filesystem::path& dir,
                        const AttrIndexOptions& opts = {});

namespace attr_files {
inline constexpr const char* kLabels = "labels.spf";
inline constexpr const char* kRange = "range.spf";
inline constexpr const char* kBloom = "bloom.spf";
inline constexpr const char* kBuckets = "buckets.spf";
}  // namespace attr_files

}  // namespace spf
