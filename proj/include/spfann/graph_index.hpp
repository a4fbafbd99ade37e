#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "spfann/page_store.hpp"
#include "spfann/types.hpp"

namespace spf {

using Adjacency = std::vector<std::vector<NodeId>>;

struct Neighbor {
  NodeId id = 0;
  float distance = 0.0f;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct BuildParams {
  int R = 32;
  int R_d = 640;
  int L_build = 64;
  float prune_alpha = 1.2f;
  std::uint64_t seed = 42;
  // Reverse edges may push a node up to slack * R before it is re-pruned.
  float degree_slack = 1.3f;
};

struct GraphMeta {
  std::uint32_t N = 0;
  std::uint32_t dim = 0;
  std::uint32_t R = 0;
  std::uint32_t R_d = 0;
  std::uint32_t S_r = 0;  // pages per base record
  std::uint32_t S_d = 0;  // pages per record including the dense page
  std::uint32_t entry_node = 0;
  std::uint32_t attr_bytes_max = 512;

  friend bool operator==(const GraphMeta&, const GraphMeta&) = default;
};

// Fills S_r / S_d from dim, R, attr_bytes_max. S_d is always S_r + 1.
GraphMeta make_meta(std::uint32_t N, std::uint32_t dim, std::uint32_t R, std::uint32_t R_d,
                    std::uint32_t entry_node, std::uint32_t attr_bytes_max = 512);

// Bytes of the base part of a record: header, attributes, vector, neighbors.
std::size_t base_record_bytes(std::size_t dim, const AttrMap& attrs, std::size_t n_direct);
std::size_t attr_bytes(const AttrMap& attrs);

// DiskANN pruning rule over squared distances. `candidates` may contain
// duplicates and `node` itself; both are dropped. `dist(a, b)` gives the
// distance between two candidate ids.
template <typename Dist>
std::vector<NodeId> robust_prune(NodeId node, std::vector<Neighbor> candidates, std::size_t R,
                                 float prune_alpha, Dist&& dist) {
  std::sort(candidates.begin(), candidates.end());
  std::vector<Neighbor> pool;
  pool.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.id == node) continue;
    if (std::any_of(pool.begin(), pool.end(), [&](const Neighbor& p) { return p.id == c.id; })) continue;
    pool.push_back(c);
  }
  std::vector<NodeId> kept;
  std::vector<bool> removed(pool.size(), false);
  for (std::size_t i = 0; i < pool.size() && kept.size() < R; ++i) {
    if (removed[i]) continue;
    kept.push_back(pool[i].id);
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      if (removed[j]) continue;
      if (prune_alpha * dist(pool[i].id, pool[j].id) <= pool[j].distance) removed[j] = true;
    }
  }
  return kept;
}

std::vector<NodeId> robust_prune(NodeId node, std::vector<Neighbor> candidates, std::size_t R,
                                 float prune_alpha, const RowMatrixXf& vectors);

struct GreedyResult {
  std::vector<Neighbor> pool;      // final top-L, ascending
  std::vector<Neighbor> explored;  // every expanded node, in expansion order
};

// In-memory best-first search with exact distances.
GreedyResult greedy_search(const RowMatrixXf& vectors, const Adjacency& adjacency, NodeId entry,
                           const Eigen::Ref<const Eigen::RowVectorXf>& query, std::size_t L);

// Point of a seeded 10k sample closest to the sample mean.
NodeId find_medoid(const RowMatrixXf& vectors, std::uint64_t seed);

struct VamanaGraph {
  Adjacency adjacency;
  NodeId entry = 0;
  double reachable_fraction = 0.0;
};

// Two Vamana passes (alpha 1, then prune_alpha), sequential and seeded.
VamanaGraph build_graph(const RowMatrixXf& vectors, const BuildParams& params);

double reachable_fraction(const Adjacency& adjacency, NodeId entry);

// Uniform sample (without replacement) of each node's 2-hop neighbors,
// excluding itself and its direct neighbors; at most R_d - R per node.
Adjacency densify(const Adjacency& adjacency, int R, int R_d, std::uint64_t seed);

struct NodeRecord {
  NodeId id = 0;
  Eigen::VectorXf vector;
  AttrMap attrs;
  std::vector<NodeId> direct_neighbors;
  std::vector<NodeId> dense_neighbors;
};

// Graph file: page 0 holds "SPFGRAF1" and the meta fields; node i's base
// record starts at page 1 + i * S_d, its dense page at 1 + i * S_d + S_r.
void serialize_index(const std::filesystem::path& path, const RowMatrixXf& vectors,
                     std::span<const AttrMap> attrs, const Adjacency& adjacency,
                     const Adjacency& dense, const GraphMeta& meta);

void encode_attrs(const AttrMap& attrs, ByteWriter& w);
AttrMap decode_attrs(ByteReader& r);

class GraphIndex {
 public:
  static GraphIndex open(const std::filesystem::path& path);

  const GraphMeta& meta() const { return meta_; }

  // One read of S_r pages, or S_d pages when `with_dense`.
  NodeRecord fetch_node(NodeId id, bool with_dense, IoCounters& ctr) const;

  // Reads only the first page of a record to decode its attributes. Charged
  // to attr_pages_read as well as pages_read.
  AttrMap read_attributes(NodeId id, IoCounters& ctr) const;

 private:
  std::uint64_t record_page(NodeId id) const { return 1 + std::uint64_t{id} * meta_.S_d; }

  PageFile file_;
  GraphMeta meta_;
};

}  // namespace spf
