#include <doctest.h>

#include <algorithm>
#include <set>

#include "spfann/graph_index.hpp"
#include "support.hpp"

using namespace spf;

namespace {

RowMatrixXf points(std::initializer_list<std::pair<float, float>> xy) {
  RowMatrixXf m(static_cast<Eigen::Index>(xy.size()), 2);
  Eigen::Index i = 0;
  for (auto [x, y] : xy) {
    m(i, 0) = x;
    m(i, 1) = y;
    ++i;
  }
  return m;
}

std::vector<Neighbor> candidates_of(const RowMatrixXf& m, NodeId node) {
  std::vector<Neighbor> c;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (static_cast<NodeId>(i) != node) c.push_back({static_cast<NodeId>(i), (m.row(i) - m.row(node)).squaredNorm()});
  return c;
}

std::set<NodeId> as_set(const std::vector<NodeId>& v) { return {v.begin(), v.end()}; }

RowMatrixXf gaussian(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrixXf m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

std::vector<AttrMap> random_attrs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AttrMap> a(n);
  for (auto& x : a) {
    const auto count = rng.below(6);
    for (std::uint64_t j = 0; j < count; ++j) x.labels.push_back(static_cast<LabelId>(rng.below(50)));
    std::sort(x.labels.begin(), x.labels.end());
    x.labels.erase(std::unique(x.labels.begin(), x.labels.end()), x.labels.end());
    x.value = static_cast<float>(rng.uniform());
  }
  return a;
}

}  // namespace

TEST_SUITE("graph_index") {
  TEST_CASE("meta arithmetic") {
    const auto m = make_meta(100'000, 64, 32, 640, 0, 512);
    CHECK(m.S_r == 1);
    CHECK(m.S_d == 2);
    CHECK(m.R_d >= 10 * m.R);
    CHECK(m.R_d <= 20 * m.R);
    const auto big = make_meta(10, 1000, 32, 640, 0, 512);
    CHECK(big.S_r == 2);
    CHECK(big.S_d == 3);
  }

  TEST_CASE("robust prune: domination chain keeps the nearest per direction") {
    const auto m = points({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {-1, 0}, {-2, 0}});
    const auto kept = robust_prune(0, candidates_of(m, 0), 8, 1.2f, m);
    CHECK(as_set(kept) == std::set<NodeId>{1, 4});
  }

  TEST_CASE("robust prune: non-dominating candidates all survive") {
    const auto m = points({{0, 0}, {1, 0}, {0, 1}, {-1, 0}, {0, -1}});
    const auto kept = robust_prune(0, candidates_of(m, 0), 4, 1.2f, m);
    CHECK(kept == std::vector<NodeId>{1, 2, 3, 4});
  }

  TEST_CASE("robust prune: six-point hand trace") {
    // a=(1,0) d=1, b=(0,2) d=4, c=(2,1) d=5, d=(-3,0) d=9, e=(1,3) d=10.
    // a removes c (1.2*2 <= 5); b removes e (1.2*2 <= 10); d survives both.
    const auto m = points({{0, 0}, {1, 0}, {0, 2}, {2, 1}, {-3, 0}, {1, 3}});
    CHECK(robust_prune(0, candidates_of(m, 0), 3, 1.2f, m) == std::vector<NodeId>{1, 2, 4});
    CHECK(robust_prune(0, candidates_of(m, 0), 5, 1.2f, m) == std::vector<NodeId>{1, 2, 4});
    CHECK(robust_prune(0, candidates_of(m, 0), 2, 1.2f, m) == std::vector<NodeId>{1, 2});
    // Duplicates and the node itself are dropped.
    auto c = candidates_of(m, 0);
    c.push_back({0, 0.0f});
    c.push_back({1, 1.0f});
    CHECK(robust_prune(0, c, 3, 1.2f, m) == std::vector<NodeId>{1, 2, 4});
  }

  TEST_CASE("two points link to each other") {
    const auto m = points({{0, 0}, {1, 1}});
    BuildParams p;
    p.R = 4;
    p.L_build = 8;
    const auto g = build_graph(m, p);
    CHECK(g.adjacency[0] == std::vector<NodeId>{1});
    CHECK(g.adjacency[1] == std::vector<NodeId>{0});
    CHECK_THROWS_AS(build_graph(points({{0, 0}}), p), BuildError);
  }

  TEST_CASE("five points on a line") {
    const auto m = points({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
    BuildParams p;
    p.R = 2;
    p.L_build = 4;
    const auto g = build_graph(m, p);
    CHECK(g.entry == 2);
    CHECK(as_set(g.adjacency[1]) == std::set<NodeId>{0, 2});
    CHECK(as_set(g.adjacency[2]) == std::set<NodeId>{1, 3});
    CHECK(as_set(g.adjacency[3]) == std::set<NodeId>{2, 4});
    for (Eigen::Index i = 0; i < 5; ++i) {
      const auto res = greedy_search(m, g.adjacency, g.entry, m.row(i), 1);
      CHECK(res.pool.front().id == static_cast<NodeId>(i));
    }
  }

  TEST_CASE("10k Gaussian: structure and unfiltered recall") {
    const auto m = gaussian(10'000, 32, 3);
    BuildParams p;
    const auto g = build_graph(m, p);
    CHECK(g.reachable_fraction >= 0.99);
    for (NodeId u = 0; u < g.adjacency.size(); ++u) {
      const auto& adj = g.adjacency[u];
      CHECK_LE(adj.size(), 32u);
      CHECK(std::find(adj.begin(), adj.end(), u) == adj.end());
      CHECK(as_set(adj).size() == adj.size());
    }

    const auto queries = gaussian(100, 32, 4);
    double recall = 0;
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      std::vector<Neighbor> all;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        all.push_back({static_cast<NodeId>(i), (m.row(i) - queries.row(q)).squaredNorm()});
      std::partial_sort(all.begin(), all.begin() + 10, all.end());
      const auto res = greedy_search(m, g.adjacency, g.entry, queries.row(q), 64);
      std::set<NodeId> found;
      for (std::size_t i = 0; i < 10; ++i) found.insert(res.pool[i].id);
      for (std::size_t i = 0; i < 10; ++i) recall += found.count(all[i].id) / 10.0;
    }
    CHECK(recall / 100.0 >= 0.95);

    const auto dense = densify(g.adjacency, 32, 640, 5);
    for (NodeId u = 0; u < dense.size(); ++u) {
      std::set<NodeId> two_hop;
      for (NodeId v : g.adjacency[u])
        for (NodeId w : g.adjacency[v]) two_hop.insert(w);
      two_hop.erase(u);
      for (NodeId v : g.adjacency[u]) two_hop.erase(v);
      const auto& d = dense[u];
      CHECK_LE(d.size(), 608u);
      CHECK(d.size() == std::min<std::size_t>(608, two_hop.size()));
      CHECK(as_set(d).size() == d.size());
      for (NodeId w : d) CHECK(two_hop.count(w) == 1);
    }
  }

  TEST_CASE("densify small graphs") {
    const Adjacency triangle{{1, 2}, {0, 2}, {0, 1}};
    for (const auto& d : densify(triangle, 2, 20, 1)) CHECK(d.empty());
    const Adjacency path{{1}, {2}, {}};
    const auto d = densify(path, 1, 10, 1);
    CHECK(d[0] == std::vector<NodeId>{2});
    CHECK(d[1].empty());
    CHECK(densify(path, 1, 10, 1) == d);
  }

  TEST_CASE("serialization round trip and layout") {
    test::TempDir dir("graph");
    const std::size_t n = 1000;
    const auto vecs = gaussian(n, 16, 8);
    const auto attrs = random_attrs(n, 9);
    Rng rng(10);
    Adjacency direct(n), dense(n);
    for (NodeId u = 0; u < n; ++u) {
      std::set<NodeId> s;
      const auto deg = rng.below(9);
      while (s.size() < deg) {
        const auto v = static_cast<NodeId>(rng.below(n));
        if (v != u) s.insert(v);
      }
      direct[u].assign(s.begin(), s.end());
      const auto dd = rng.below(40);
      for (std::uint64_t j = 0; j < dd; ++j) dense[u].push_back(static_cast<NodeId>(rng.below(n)));
    }
    const auto meta = make_meta(n, 16, 8, 120, 17, 64);
    serialize_index(dir / "g", vecs, attrs, direct, dense, meta);
    const auto g = GraphIndex::open(dir / "g");
    CHECK(g.meta() == meta);
    CHECK(std::filesystem::file_size(dir / "g") == (1 + n * meta.S_d) * kPageSize);

    IoCounters ctr;
    for (NodeId u = 0; u < n; ++u) {
      const auto rec = g.fetch_node(u, true, ctr);
      CHECK(rec.id == u);
      CHECK(rec.vector == vecs.row(u).transpose());
      CHECK(rec.attrs == attrs[u]);
      CHECK(rec.direct_neighbors == direct[u]);
      CHECK(rec.dense_neighbors == dense[u]);
    }
    CHECK(ctr.pages_read == n * meta.S_d);
    CHECK(ctr.records_fetched == n);

    // Node i's record starts at page 1 + i * S_d.
    const auto raw = PageFile::open(dir / "g");
    IoCounters raw_ctr;
    for (NodeId u : {0u, 1u, 500u, 999u}) {
      const auto page = raw.read_pages(1 + std::uint64_t{u} * meta.S_d, 1, raw_ctr);
      ByteReader r(page);
      CHECK(r.get<std::uint32_t>() == u);
    }
  }

  TEST_CASE("fetch accounting and free attributes") {
    test::TempDir dir("graph");
    const auto vecs = gaussian(4, 8, 1);
    std::vector<AttrMap> attrs(4);
    attrs[2].labels = {3, 7};
    attrs[2].value = 0.25f;
    const Adjacency direct{{1}, {2}, {3}, {0}};
    const Adjacency dense{{2}, {}, {}, {}};
    const auto meta = make_meta(4, 8, 4, 40, 0, 64);
    serialize_index(dir / "g", vecs, attrs, direct, dense, meta);
    const auto g = GraphIndex::open(dir / "g");

    IoCounters ctr;
    const auto a = g.fetch_node(2, false, ctr);
    CHECK(ctr.pages_read == meta.S_r);
    CHECK(a.dense_neighbors.empty());
    CHECK(a.attrs == attrs[2]);
    g.fetch_node(0, true, ctr);
    CHECK(ctr.pages_read == meta.S_r + meta.S_d);
    g.fetch_node(0, true, ctr);
    CHECK(ctr.pages_read == meta.S_r + 2 * meta.S_d);
    CHECK(ctr.attr_pages_read == 0);

    const auto b = g.fetch_node(1, false, ctr);
    CHECK(b.attrs.labels.empty());
    CHECK(b.dense_neighbors.empty());

    IoCounters actr;
    CHECK(g.read_attributes(2, actr) == attrs[2]);
    CHECK(actr.pages_read == 1);
    CHECK(actr.attr_pages_read == 1);
    CHECK_THROWS_AS(g.fetch_node(4, false, ctr), BoundsError);
  }

  TEST_CASE("record exactly filling S_r pages is accepted, one more neighbor is not") {
    test::TempDir dir("graph");
    // header 6 + attributes 6 + vector 4 * 1000 + neighbors 4 * 21 = 4096.
    const std::size_t n = 23;
    RowMatrixXf vecs = RowMatrixXf::Zero(n, 1000);
    std::vector<AttrMap> attrs(n);
    Adjacency direct(n), dense(n);
    for (NodeId v = 1; v <= 21; ++v) direct[0].push_back(v);
    GraphMeta meta;
    meta.N = n;
    meta.dim = 1000;
    meta.R = 22;
    meta.R_d = 40;
    meta.S_r = 1;
    meta.S_d = 2;
    meta.attr_bytes_max = 64;
    CHECK(base_record_bytes(1000, attrs[0], 21) == kPageSize);
    CHECK_NOTHROW(serialize_index(dir / "ok", vecs, attrs, direct, dense, meta));
    const auto g = GraphIndex::open(dir / "ok");
    IoCounters ctr;
    CHECK(g.fetch_node(0, false, ctr).direct_neighbors.size() == 21);

    direct[0].push_back(22);
    CHECK(base_record_bytes(1000, attrs[0], 22) == kPageSize + 4);
    CHECK_THROWS_AS(serialize_index(dir / "bad", vecs, attrs, direct, dense, meta), BuildError);
  }

  TEST_CASE("attributes beyond attr_bytes_max are a build error") {
    test::TempDir dir("graph");
    const auto vecs = gaussian(2, 4, 1);
    std::vector<AttrMap> attrs(2);
    for (LabelId l = 0; l < 20; ++l) attrs[0].labels.push_back(l);
    const Adjacency direct{{1}, {0}}, dense{{}, {}};
    const auto meta = make_meta(2, 4, 2, 20, 0, 64);
    CHECK_THROWS_AS(serialize_index(dir / "g", vecs, attrs, direct, dense, meta), BuildError);
  }
}
