#include "spfann/attr_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "spfann/errors.hpp"

namespace spf {

namespace {

constexpr Magic kLabelsMagic = make_magic("SPFLBL01");
constexpr Magic kRangeMagic = make_magic("SPFRNG01");
constexpr Magic kBloomMagic = make_magic("SPFBLM01");
constexpr Magic kBucketsMagic = make_magic("SPFBKT01");
constexpr std::size_t kPairBytes = 8;

std::uint64_t quantile_rank(int i, std::uint64_t n) {
  return static_cast<std::uint64_t>(i) * n / kQuantiles;
}

}  // namespace

// ---- LabelIndex -------------------------------------------------------------

LabelIndex LabelIndex::open(const std::filesystem::path& path) {
  LabelIndex idx;
  idx.file_ = PageFile::open(path);
  IoCounters scratch;
  if (idx.file_.total_pages() == 0) throw CorruptionError(path.string() + ": empty file");
  auto first = idx.file_.read_pages(0, 1, scratch);
  ByteReader head(first);
  head.expect_magic(kLabelsMagic, path.string());
  const auto vocab = head.get<std::uint32_t>();
  const std::size_t header_bytes = 12 + std::size_t{vocab} * 12;
  const auto header_pages = pages_for_bytes(header_bytes);
  const auto all = idx.file_.read_pages(0, header_pages, scratch);
  ByteReader r(all);
  r.skip(12);
  idx.directory_.resize(vocab);
  for (auto& e : idx.directory_) {
    e.offset = r.get<std::uint64_t>();
    e.count = r.get<std::uint32_t>();
    if (e.offset % kPageSize != 0 ||
        pages_for_bytes(e.offset + 4ull * e.count) > idx.file_.total_pages()) {
      throw CorruptionError(path.string() + ": posting directory entry out of range");
    }
  }
  return idx;
}

std::vector<NodeId> LabelIndex::lookup_postings(LabelId label, IoCounters& ctr) const {
  if (label >= directory_.size()) return {};
  const Entry& e = directory_[label];
  if (e.count == 0) return {};
  const auto bytes = file_.read_pages(e.offset / kPageSize, posting_pages(label), ctr);
  std::vector<NodeId> ids(e.count);
  std::memcpy(ids.data(), bytes.data(), ids.size() * sizeof(NodeId));
  return ids;
}

std::uint64_t LabelIndex::posting_pages(LabelId label) const {
  if (label >= directory_.size()) return 0;
  return pages_for_bytes(4ull * directory_[label].count);
}

std::uint32_t LabelIndex::frequency(LabelId label) const {
  return label < directory_.size() ? directory_[label].count : 0;
}

// ---- VectorBloom ------------------------------------------------------------

std::uint32_t VectorBloom::mask(NodeId v, LabelId label) const {
  // Double hashing: position_i = h1 + i * h2, both keyed by a per-vector salt.
  const std::uint64_t salt = mix64(seed_, v);
  const std::uint64_t h1 = mix64(salt, label);
  const std::uint64_t h2 = mix64(salt ^ 0xA5A5A5A5DEADBEEFULL, label);
  std::uint32_t m = 0;
  for (int i = 0; i < k_; ++i) {
    m |= 1u << ((h1 + static_cast<std::uint64_t>(i) * h2) % kBits);
  }
  return m;
}

void VectorBloom::insert(NodeId v, LabelId label) { words_[v] |= mask(v, label); }

bool VectorBloom::might_contain(NodeId v, LabelId label) const {
  const std::uint32_t m = mask(v, label);
  return (words_[v] & m) == m;
}

void VectorBloom::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.put_magic(kBloomMagic);
  w.put(static_cast<std::uint32_t>(words_.size()));
  w.put(static_cast<std::uint32_t>(k_));
  w.put(seed_);
  w.put_array(std::span<const std::uint32_t>(words_));
  write_file(path, w.bytes());
}

VectorBloom VectorBloom::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kBloomMagic, path.string());
  const auto n = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  const auto seed = r.get<std::uint64_t>();
  VectorBloom b(n, static_cast<int>(k), seed);
  r.get_array(std::span<std::uint32_t>(b.words_));
  return b;
}

double bloom_false_positive_rate(double n_keys, int m_bits, int k_hashes) {
  const double fill = 1.0 - std::exp(-static_cast<double>(k_hashes) * n_keys / m_bits);
  return std::pow(fill, k_hashes);
}

// ---- RangeIndex -------------------------------------------------------------

RangeIndex RangeIndex::open(const std::filesystem::path& pairs_path,
                            const std::filesystem::path& buckets_path) {
  RangeIndex idx;
  idx.file_ = PageFile::open(pairs_path);
  IoCounters scratch;
  if (idx.file_.total_pages() == 0) throw CorruptionError(pairs_path.string() + ": empty file");
  const auto head = idx.file_.read_pages(0, 1, scratch);
  ByteReader hr(head);
  hr.expect_magic(kRangeMagic, pairs_path.string());
  idx.n_ = hr.get<std::uint32_t>();
  if (1 + pages_for_bytes(std::uint64_t{idx.n_} * kPairBytes) != idx.file_.total_pages()) {
    throw CorruptionError(pairs_path.string() + ": length does not match pair count");
  }

  const auto bytes = read_file(buckets_path);
  ByteReader r(bytes);
  r.expect_magic(kBucketsMagic, buckets_path.string());
  if (r.get<std::uint32_t>() != idx.n_) {
    throw CorruptionError(buckets_path.string() + ": vector count differs from range file");
  }
  idx.codes_.resize(idx.n_);
  r.get_array(std::span<std::uint8_t>(idx.codes_));
  r.get_array(std::span<float>(idx.bounds_));
  idx.quantiles_.resize(kQuantiles);
  r.get_array(std::span<float>(idx.quantiles_));
  return idx;
}

RangeIndex::RankSpan RangeIndex::candidate_ranks(float l, float r) const {
  if (n_ == 0 || !(l < r) || r <= bounds_.front() || l > bounds_.back()) return {0, 0};
  // The quantile summary pins exact ranks every N/1000 entries.
  const auto below = std::lower_bound(quantiles_.begin(), quantiles_.end(), l);
  RankSpan s;
  if (below != quantiles_.begin()) {
    s.lo = quantile_rank(static_cast<int>(below - quantiles_.begin()) - 1, n_);
  }
  const auto at_or_above = std::lower_bound(quantiles_.begin(), quantiles_.end(), r);
  s.hi = at_or_above == quantiles_.end()
             ? n_
             : quantile_rank(static_cast<int>(at_or_above - quantiles_.begin()), n_);
  if (s.hi < s.lo) s.hi = s.lo;
  return s;
}

std::uint64_t RangeIndex::scan_pages(float l, float r) const {
  const RankSpan s = candidate_ranks(l, r);
  if (s.hi == s.lo) return 0;
  const std::uint64_t first_byte = kPageSize + s.lo * kPairBytes;
  const std::uint64_t end_byte = kPageSize + s.hi * kPairBytes;
  return pages_for_bytes(end_byte) - first_byte / kPageSize;
}

std::vector<NodeId> RangeIndex::scan_range(float l, float r, IoCounters& ctr) const {
  const RankSpan s = candidate_ranks(l, r);
  if (s.hi == s.lo) return {};
  const std::uint64_t first_byte = kPageSize + s.lo * kPairBytes;
  const std::uint64_t first_page = first_byte / kPageSize;
  const auto bytes = file_.read_pages(first_page, scan_pages(l, r), ctr);
  std::vector<NodeId> ids;
  ByteReader rd(bytes);
  rd.seek(first_byte - first_page * kPageSize);
  for (std::uint64_t rank = s.lo; rank < s.hi; ++rank) {
    const auto id = rd.get<std::uint32_t>();
    const auto value = rd.get<float>();
    if (value >= r) break;
    if (value >= l) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::bitset<kRangeBuckets> RangeIndex::overlapping_buckets(float l, float r) const {
  std::bitset<kRangeBuckets> mask;
  for (int b = 0; b < kRangeBuckets; ++b) {
    const float lo = bounds_[static_cast<std::size_t>(b)];
    const float hi = bounds_[static_cast<std::size_t>(b) + 1];
    const bool last = b == kRangeBuckets - 1;
    // Bucket b holds [lo, hi); the last bucket is closed on the right.
    if (lo < r && (last ? hi >= l : hi > l)) mask.set(static_cast<std::size_t>(b));
  }
  return mask;
}

double RangeIndex::cdf(float x) const {
  // Piecewise-linear estimate of P(value < x) through the quantile points,
  // closed by (max, 1).
  if (n_ == 0 || x <= quantiles_.front()) return 0.0;
  if (x > bounds_.back()) return 1.0;
  const auto j = static_cast<std::size_t>(std::lower_bound(quantiles_.begin(), quantiles_.end(), x) -
                                          quantiles_.begin());
  const double left = quantiles_[j - 1];
  const double right = j < quantiles_.size() ? quantiles_[j] : bounds_.back();
  double frac = 1.0;
  if (right > left) frac = std::clamp((static_cast<double>(x) - left) / (right - left), 0.0, 1.0);
  return (static_cast<double>(j - 1) + frac) / kQuantiles;
}

double RangeIndex::selectivity_from_quantiles(float l, float r) const {
  if (!(l < r)) return 0.0;
  return std::clamp(cdf(r) - cdf(l), 0.0, 1.0);
}

double RangeIndex::bucket_fraction(float l, float r) const {
  return static_cast<double>(overlapping_buckets(l, r).count()) / kRangeBuckets;
}

// ---- AttributeIndexSet ------------------------------------------------------

AttributeIndexSet AttributeIndexSet::open(const std::filesystem::path& dir) {
  AttributeIndexSet s;
  s.labels_ = LabelIndex::open(dir / attr_files::kLabels);
  s.bloom_ = VectorBloom::load(dir / attr_files::kBloom);
  s.range_ = RangeIndex::open(dir / attr_files::kRange, dir / attr_files::kBuckets);
  if (s.bloom_.size() != s.range_.size()) {
    throw CorruptionError(dir.string() + ": attribute files disagree on vector count");
  }
  s.stats_.N = s.range_.size();
  s.stats_.frequency.resize(s.labels_.vocab_size());
  std::uint64_t total = 0;
  for (LabelId l = 0; l < s.labels_.vocab_size(); ++l) {
    s.stats_.frequency[l] = s.labels_.frequency(l);
    total += s.stats_.frequency[l];
  }
  s.stats_.mean_labels_per_vector =
      s.stats_.N ? static_cast<double>(total) / s.stats_.N : 0.0;
  return s;
}

void build_attr_indexes(std::span<const AttrMap> attrs, std::uint32_t vocab_size,
                        std::uint64_t seed, const std::filesystem::path& dir,
                        const AttrIndexOptions& opts) {
  const auto n = static_cast<std::uint32_t>(attrs.size());
  std::vector<std::vector<NodeId>> postings(vocab_size);
  VectorBloom bloom(n, opts.bloom_hashes, seed);
  for (NodeId v = 0; v < n; ++v) {
    if (!std::isfinite(attrs[v].value)) {
      throw BuildError("range value of vector " + std::to_string(v) + " is not finite");
    }
    for (LabelId l : attrs[v].labels) {
      if (l >= vocab_size) {
        throw BuildError("label " + std::to_string(l) + " on vector " + std::to_string(v) +
                         " exceeds vocabulary size " + std::to_string(vocab_size));
      }
      postings[l].push_back(v);
      bloom.insert(v, l);
    }
  }
  std::filesystem::create_directories(dir);

  // Postings: header + directory, then each list on its own page run.
  {
    ByteWriter head;
    head.put_magic(kLabelsMagic);
    head.put(vocab_size);
    std::uint64_t offset = pages_for_bytes(12 + std::uint64_t{vocab_size} * 12) * kPageSize;
    for (const auto& list : postings) {
      head.put(list.empty() ? std::uint64_t{0} : offset);
      head.put(static_cast<std::uint32_t>(list.size()));
      offset += pages_for_bytes(4ull * list.size()) * kPageSize;
    }
    PageWriter out(dir / attr_files::kLabels);
    out.write_blob(head.bytes());
    for (const auto& list : postings) {
      if (!list.empty()) out.write_blob(std::as_bytes(std::span<const NodeId>(list)));
    }
    out.close();
  }

  // Range pairs sorted by (value, id).
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return attrs[a].value < attrs[b].value || (attrs[a].value == attrs[b].value && a < b);
  });
  {
    ByteWriter head;
    head.put_magic(kRangeMagic);
    head.put(n);
    ByteWriter pairs;
    for (NodeId id : order) {
      pairs.put(id);
      pairs.put(attrs[id].value);
    }
    PageWriter out(dir / attr_files::kRange);
    out.write_blob(head.bytes());
    if (n > 0) out.write_blob(pairs.bytes());
    out.close();
  }

  // Equal-frequency bucket bounds and the quantile summary.
  std::array<float, kRangeBuckets + 1> bounds{};
  std::vector<float> quantiles(kQuantiles, 0.0f);
  std::vector<std::uint8_t> codes(n, 0);
  if (n > 0) {
    for (int b = 0; b < kRangeBuckets; ++b) {
      bounds[static_cast<std::size_t>(b)] = attrs[order[std::uint64_t{static_cast<std::uint32_t>(b)} * n / kRangeBuckets]].value;
    }
    bounds[kRangeBuckets] = attrs[order[n - 1]].value;
    for (int i = 0; i < kQuantiles; ++i) {
      quantiles[static_cast<std::size_t>(i)] = attrs[order[quantile_rank(i, n)]].value;
    }
    for (NodeId v = 0; v < n; ++v) {
      const auto pos = std::upper_bound(bounds.begin(), bounds.end() - 1, attrs[v].value) - bounds.begin();
      codes[v] = static_cast<std::uint8_t>(std::clamp<std::ptrdiff_t>(pos - 1, 0, kRangeBuckets - 1));
    }
  }
  {
    ByteWriter w;
    w.put_magic(kBucketsMagic);
    w.put(n);
    w.put_array(std::span<const std::uint8_t>(codes));
    w.put_array(std::span<const float>(bounds));
    w.put_array(std::span<const float>(quantiles));
    write_file(dir / attr_files::kBuckets, w.bytes());
  }
  bloom.save(dir / attr_files::kBloom);
}

}  // namespace spf
