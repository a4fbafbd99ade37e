#include "spfann/graph_index.hpp"

#include <cmath>
#include <deque>
#include <numeric>
#include <string>

#include "spfann/errors.hpp"
#include "spfann/quantizer.hpp"

namespace spf {

namespace {

constexpr Magic kGraphMagic = make_magic("SPFGRAF1");
constexpr std::size_t kRecordHeaderBytes = 4 + 2;  // u32 id, u16 n_direct
constexpr std::size_t kMaxDensePerPage = (kPageSize - 4) / 4;
constexpr std::size_t kMedoidSample = 10'000;

float row_distance(const RowMatrixXf& v, NodeId a, NodeId b) {
  return squared_l2(v.row(a), v.row(b));
}

// Epoch-stamped visited set reused across searches of one build.
class VisitedSet {
 public:
  explicit VisitedSet(std::size_t n) : stamp_(n, 0) {}
  void clear() {
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      epoch_ = 1;
    }
  }
  // True if newly inserted.
  bool insert(NodeId id) {
    if (stamp_[id] == epoch_) return false;
    stamp_[id] = epoch_;
    return true;
  }

 private:
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
};

struct PoolEntry {
  Neighbor n;
  bool expanded = false;
};

GreedyResult greedy_search_impl(const RowMatrixXf& vectors, const Adjacency& adjacency,
                                NodeId entry, const Eigen::Ref<const Eigen::RowVectorXf>& query,
                                std::size_t L, VisitedSet& visited) {
  visited.clear();
  std::vector<PoolEntry> pool;
  pool.reserve(L + 64);
  visited.insert(entry);
  pool.push_back({{entry, squared_l2(vectors.row(entry), query)}, false});
  GreedyResult out;
  while (true) {
    auto it = std::find_if(pool.begin(), pool.end(), [](const PoolEntry& e) { return !e.expanded; });
    if (it == pool.end()) break;
    it->expanded = true;
    const Neighbor cur = it->n;
    out.explored.push_back(cur);
    for (NodeId nb : adjacency[cur.id]) {
      if (!visited.insert(nb)) continue;
      const Neighbor cand{nb, squared_l2(vectors.row(nb), query)};
      if (pool.size() >= L && !(cand < pool.back().n)) continue;
      auto pos = std::lower_bound(pool.begin(), pool.end(), cand,
                                  [](const PoolEntry& e, const Neighbor& c) { return e.n < c; });
      pool.insert(pos, {cand, false});
      if (pool.size() > L) pool.pop_back();
    }
  }
  out.pool.reserve(pool.size());
  for (const auto& e : pool) out.pool.push_back(e.n);
  return out;
}

std::vector<Neighbor> with_distances(const RowMatrixXf& v, NodeId node, const std::vector<NodeId>& ids) {
  std::vector<Neighbor> out;
  out.reserve(ids.size() + 1);
  for (NodeId id : ids) out.push_back({id, row_distance(v, node, id)});
  return out;
}

}  // namespace

GraphMeta make_meta(std::uint32_t N, std::uint32_t dim, std::uint32_t R, std::uint32_t R_d,
                    std::uint32_t entry_node, std::uint32_t attr_bytes_max) {
  GraphMeta m;
  m.N = N;
  m.dim = dim;
  m.R = R;
  m.R_d = R_d;
  m.entry_node = entry_node;
  m.attr_bytes_max = attr_bytes_max;
  const std::size_t base = kRecordHeaderBytes + attr_bytes_max + 4ull * dim + 4ull * R;
  m.S_r = static_cast<std::uint32_t>(pages_for_bytes(base));
  m.S_d = m.S_r + 1;
  return m;
}

std::size_t attr_bytes(const AttrMap& attrs) { return 2 + 4 * attrs.labels.size() + 4; }

std::size_t base_record_bytes(std::size_t dim, const AttrMap& attrs, std::size_t n_direct) {
  return kRecordHeaderBytes + attr_bytes(attrs) + 4 * dim + 4 * n_direct;
}

std::vector<NodeId> robust_prune(NodeId node, std::vector<Neighbor> candidates, std::size_t R,
                                 float prune_alpha, const RowMatrixXf& vectors) {
  return robust_prune(node, std::move(candidates), R, prune_alpha,
                      [&](NodeId a, NodeId b) { return row_distance(vectors, a, b); });
}

GreedyResult greedy_search(const RowMatrixXf& vectors, const Adjacency& adjacency, NodeId entry,
                           const Eigen::Ref<const Eigen::RowVectorXf>& query, std::size_t L) {
  if (query.size() != vectors.cols()) throw ShapeError("query dimension mismatch");
  VisitedSet visited(static_cast<std::size_t>(vectors.rows()));
  return greedy_search_impl(vectors, adjacency, entry, query, L, visited);
}

NodeId find_medoid(const RowMatrixXf& vectors, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  std::vector<NodeId> ids(n);
  std::iota(ids.begin(), ids.end(), NodeId{0});
  if (n > kMedoidSample) {
    Rng rng(mix64(seed, 0x6d65646f6964ULL));
    for (std::size_t i = 0; i < kMedoidSample; ++i) std::swap(ids[i], ids[i + rng.below(n - i)]);
    ids.resize(kMedoidSample);
    std::sort(ids.begin(), ids.end());
  }
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(vectors.cols());
  for (NodeId id : ids) mean += vectors.row(id).cast<double>();
  mean /= static_cast<double>(ids.size());
  const Eigen::RowVectorXf centre = mean.cast<float>();
  NodeId best = ids.front();
  float best_d = squared_l2(vectors.row(best), centre);
  for (NodeId id : ids) {
    const float d = squared_l2(vectors.row(id), centre);
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

double reachable_fraction(const Adjacency& adjacency, NodeId entry) {
  if (adjacency.empty()) return 0.0;
  std::vector<bool> seen(adjacency.size(), false);
  std::deque<NodeId> queue{entry};
  seen[entry] = true;
  std::size_t count = 1;
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (NodeId v : adjacency[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      ++count;
      queue.push_back(v);
    }
  }
  return static_cast<double>(count) / static_cast<double>(adjacency.size());
}

VamanaGraph build_graph(const RowMatrixXf& vectors, const BuildParams& params) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (n < 2) throw BuildError("graph build needs at least 2 vectors");
  if (params.R < 1 || params.L_build < params.R || params.prune_alpha < 1.0f) {
    throw BuildError("invalid build parameters (need R >= 1, L_build >= R, prune_alpha >= 1)");
  }
  const auto R = static_cast<std::size_t>(params.R);
  const auto slack_limit = static_cast<std::size_t>(std::floor(params.degree_slack * params.R));

  VamanaGraph g;
  g.adjacency.assign(n, {});
  g.entry = find_medoid(vectors, params.seed);

  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  Rng rng(params.seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  VisitedSet visited(n);
  const float alphas[] = {1.0f, params.prune_alpha};
  for (float alpha : alphas) {
    for (NodeId p : order) {
      GreedyResult res = greedy_search_impl(vectors, g.adjacency, g.entry, vectors.row(p),
                                            static_cast<std::size_t>(params.L_build), visited);
      std::vector<Neighbor> cands = std::move(res.explored);
      for (NodeId q : g.adjacency[p]) cands.push_back({q, row_distance(vectors, p, q)});
      g.adjacency[p] = robust_prune(p, std::move(cands), R, alpha, vectors);
      for (NodeId j : g.adjacency[p]) {
        auto& back = g.adjacency[j];
        if (std::find(back.begin(), back.end(), p) != back.end()) continue;
        back.push_back(p);
        if (back.size() > slack_limit) {
          back = robust_prune(j, with_distances(vectors, j, back), R, alpha, vectors);
        }
      }
    }
  }
  for (NodeId u = 0; u < n; ++u) {
    if (g.adjacency[u].size() > R) {
      g.adjacency[u] = robust_prune(u, with_distances(vectors, u, g.adjacency[u]), R,
                                    params.prune_alpha, vectors);
    }
  }
  g.reachable_fraction = reachable_fraction(g.adjacency, g.entry);
  if (g.reachable_fraction < 0.99) {
    throw BuildError("only " + std::to_string(g.reachable_fraction * 100.0) +
                     "% of nodes are reachable from the entry node");
  }
  return g;
}

Adjacency densify(const Adjacency& adjacency, int R, int R_d, std::uint64_t seed) {
  const std::size_t budget = R_d > R ? static_cast<std::size_t>(R_d - R) : 0;
  const std::size_t n = adjacency.size();
  Adjacency dense(n);
  std::vector<std::uint32_t> mark(n, 0);
  std::uint32_t epoch = 0;
  std::vector<NodeId> pool;
  for (NodeId u = 0; u < n; ++u) {
    ++epoch;
    mark[u] = epoch;
    for (NodeId v : adjacency[u]) mark[v] = epoch;
    pool.clear();
    for (NodeId v : adjacency[u]) {
      for (NodeId w : adjacency[v]) {
        if (mark[w] == epoch) continue;
        mark[w] = epoch;
        pool.push_back(w);
      }
    }
    std::sort(pool.begin(), pool.end());
    const std::size_t take = std::min(budget, pool.size());
    Rng rng(mix64(seed, u));
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    dense[u].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return dense;
}

void encode_attrs(const AttrMap& attrs, ByteWriter& w) {
  if (attrs.labels.size() > 0xFFFF) throw BuildError("too many labels on one vector");
  w.put(static_cast<std::uint16_t>(attrs.labels.size()));
  w.put_array(std::span<const LabelId>(attrs.labels));
  w.put(attrs.value);
}

AttrMap decode_attrs(ByteReader& r) {
  AttrMap a;
  a.labels.resize(r.get<std::uint16_t>());
  r.get_array(std::span<LabelId>(a.labels));
  a.value = r.get<float>();
  return a;
}

void serialize_index(const std::filesystem::path& path, const RowMatrixXf& vectors,
                     std::span<const AttrMap> attrs, const Adjacency& adjacency,
                     const Adjacency& dense, const GraphMeta& meta) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (attrs.size() != n || adjacency.size() != n || dense.size() != n || meta.N != n ||
      meta.dim != static_cast<std::uint32_t>(vectors.cols())) {
    throw BuildError("serialize_index: inconsistent input sizes");
  }
  if (meta.S_d != meta.S_r + 1) throw BuildError("serialize_index: S_d must equal S_r + 1");
  if (meta.entry_node >= n) throw BuildError("serialize_index: entry node out of range");
  // Attributes must sit in the first page so read_attributes needs one page.
  if (meta.attr_bytes_max + kRecordHeaderBytes > kPageSize) {
    throw BuildError("serialize_index: attr_bytes_max must leave room for the header in page one");
  }
  if (meta.R_d < meta.R || meta.R_d - meta.R > kMaxDensePerPage) {
    throw BuildError("serialize_index: dense neighbors do not fit one page");
  }

  PageWriter out(path);
  ByteWriter header;
  header.put_magic(kGraphMagic);
  for (std::uint32_t f : {meta.dim, meta.N, meta.R, meta.R_d, meta.S_r, meta.S_d,
                          meta.entry_node, meta.attr_bytes_max}) {
    header.put(f);
  }
  out.write_blob(header.bytes());

  const std::size_t base_capacity = std::size_t{meta.S_r} * kPageSize;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& direct = adjacency[i];
    const auto& extra = dense[i];
    if (attr_bytes(attrs[i]) > meta.attr_bytes_max) {
      throw BuildError("attributes of node " + std::to_string(i) + " need " +
                       std::to_string(attr_bytes(attrs[i])) + " bytes; raise attr_bytes_max above " +
                       std::to_string(meta.attr_bytes_max));
    }
    if (direct.size() > meta.R) throw BuildError("node " + std::to_string(i) + " exceeds degree R");
    if (extra.size() > meta.R_d - meta.R) {
      throw BuildError("node " + std::to_string(i) + " exceeds dense budget R_d - R");
    }
    ByteWriter rec;
    rec.put(static_cast<std::uint32_t>(i));
    rec.put(static_cast<std::uint16_t>(direct.size()));
    encode_attrs(attrs[i], rec);
    const auto row = vectors.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index d = 0; d < row.size(); ++d) rec.put(row[d]);
    rec.put_array(std::span<const NodeId>(direct));
    if (rec.size() > base_capacity) {
      throw BuildError("record of node " + std::to_string(i) + " overflows S_r pages");
    }
    rec.pad_to(base_capacity);
    rec.put(static_cast<std::uint32_t>(extra.size()));
    rec.put_array(std::span<const NodeId>(extra));
    rec.pad_to(std::size_t{meta.S_d} * kPageSize);
    out.write_blob(rec.bytes());
  }
  out.close();
}

GraphIndex GraphIndex::open(const std::filesystem::path& path) {
  GraphIndex g;
  g.file_ = PageFile::open(path);
  IoCounters scratch;
  if (g.file_.total_pages() == 0) throw CorruptionError(path.string() + ": empty graph file");
  const auto page = g.file_.read_pages(0, 1, scratch);
  ByteReader r(page);
  r.expect_magic(kGraphMagic, path.string());
  auto& m = g.meta_;
  m.dim = r.get<std::uint32_t>();
  m.N = r.get<std::uint32_t>();
  m.R = r.get<std::uint32_t>();
  m.R_d = r.get<std::uint32_t>();
  m.S_r = r.get<std::uint32_t>();
  m.S_d = r.get<std::uint32_t>();
  m.entry_node = r.get<std::uint32_t>();
  m.attr_bytes_max = r.get<std::uint32_t>();
  if (m.S_d != m.S_r + 1 || m.entry_node >= m.N ||
      g.file_.total_pages() != 1 + std::uint64_t{m.N} * m.S_d) {
    throw CorruptionError(path.string() + ": graph header inconsistent with file length");
  }
  return g;
}

NodeRecord GraphIndex::fetch_node(NodeId id, bool with_dense, IoCounters& ctr) const {
  if (id >= meta_.N) throw BoundsError("node id " + std::to_string(id) + " out of range");
  const std::uint32_t n_pages = with_dense ? meta_.S_d : meta_.S_r;
  const auto bytes = file_.read_pages(record_page(id), n_pages, ctr);
  ++ctr.records_fetched;

  ByteReader r(bytes);
  NodeRecord rec;
  rec.id = r.get<std::uint32_t>();
  if (rec.id != id) throw CorruptionError("record at slot " + std::to_string(id) + " has id " + std::to_string(rec.id));
  const auto n_direct = r.get<std::uint16_t>();
  rec.attrs = decode_attrs(r);
  rec.vector.resize(meta_.dim);
  r.get_array(std::span<float>(rec.vector.data(), meta_.dim));
  rec.direct_neighbors.resize(n_direct);
  r.get_array(std::span<NodeId>(rec.direct_neighbors));
  if (with_dense) {
    r.seek(std::size_t{meta_.S_r} * kPageSize);
    rec.dense_neighbors.resize(r.get<std::uint32_t>());
    if (rec.dense_neighbors.size() > kMaxDensePerPage) throw CorruptionError("dense list length");
    r.get_array(std::span<NodeId>(rec.dense_neighbors));
  }
  return rec;
}

AttrMap GraphIndex::read_attributes(NodeId id, IoCounters& ctr) const {
  if (id >= meta_.N) throw BoundsError("node id " + std::to_string(id) + " out of range");
  const auto bytes = file_.read_pages(record_page(id), 1, ctr);
  ++ctr.attr_pages_read;
  ByteReader r(bytes);
  r.skip(kRecordHeaderBytes);
  return decode_attrs(r);
}

}  // namespace spf
