#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "spfann/attr_index.hpp"
#include "spfann/bench.hpp"
#include "spfann/graph_index.hpp"
#include "spfann/quantizer.hpp"
#include "spfann/search_engine.hpp"

namespace spf::test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("spfann_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Writes every index file for a hand-built graph and opens an engine on it.
// With at most 256 distinct points and one PQ subspace every point is its own
// centroid, so ADC distances are exact.
inline SearchEngine make_engine(const std::filesystem::path& dir, const RowMatrixXf& vectors,
                                const std::vector<AttrMap>& attrs, const Adjacency& direct,
                                const Adjacency& dense, NodeId entry, std::uint32_t R, std::uint32_t R_d,
                                std::uint32_t vocab) {
  const auto n = static_cast<std::uint32_t>(vectors.rows());
  const auto dim = static_cast<std::uint32_t>(vectors.cols());
  const auto meta = make_meta(n, dim, R, R_d, entry, 64);
  serialize_index(dir / index_files::kGraph, vectors, attrs, direct, dense, meta);

  RowMatrixXf sample(kPqCentroids, dim);
  for (Eigen::Index i = 0; i < sample.rows(); ++i) {
    if (i < vectors.rows()) {
      sample.row(i) = vectors.row(i);
    } else {
      sample.row(i).setConstant(1000.0f + 10.0f * static_cast<float>(i));
    }
  }
  const auto cb = train_codebook(sample, 1, 7);
  save_codebook(cb, dir / index_files::kCodebook);
  save_codes(encode_all(cb, vectors), dir / index_files::kCodes);
  build_attr_indexes(attrs, vocab, 11, dir);
  return SearchEngine::open(dir);
}

// Filtered brute force over exact attributes: ids of the k nearest valid
// vectors, ascending (distance, id).
inline std::vector<NodeId> brute_force(const RowMatrixXf& vectors, const std::vector<AttrMap>& attrs,
                                       const Selector& sel, const Eigen::VectorXf& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    if (!sel.is_member(attrs[static_cast<std::size_t>(i)])) continue;
    all.push_back({static_cast<NodeId>(i), (vectors.row(i).transpose() - q).squaredNorm()});
  }
  std::sort(all.begin(), all.end());
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < all.size() && i < k; ++i) ids.push_back(all[i].id);
  return ids;
}

inline std::vector<NodeId> ids_of(const std::vector<Hit>& hits) {
  std::vector<NodeId> ids;
  for (const auto& h : hits) ids.push_back(h.id);
  return ids;
}

// A 10k-vector corpus with graph, PQ and attribute indexes, built once per
// test process.
struct SmallCorpus {
  Dataset ds;
  std::filesystem::path dir;
  std::optional<SearchEngine> engine;
};

inline const SmallCorpus& small_corpus() {
  static TempDir dir("corpus");
  static const SmallCorpus corpus = [] {
    SmallCorpus c;
    DatasetSpec spec;
    spec.N = 10'000;
    spec.seed = 5;
    c.ds = generate_dataset(spec);
    c.dir = dir.path();
    IndexBuildConfig cfg;
    build_index(c.ds, cfg, c.dir);
    build_attrs(c.ds, 3, c.dir);
    c.engine.emplace(SearchEngine::open(c.dir));
    return c;
  }();
  return corpus;
}

}  // namespace spf::test
