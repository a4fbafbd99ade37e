#include "spfann/search_engine.hpp"

#include <algorithm>
#include <cmath>

#include "spfann/errors.hpp"

namespace spf {

std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::Auto: return "auto";
    case Mechanism::Pre: return "pre";
    case Mechanism::In: return "in";
    case Mechanism::Post: return "post";
    case Mechanism::StrictIn: return "strict-in";
  }
  return "?";
}

Mechanism parse_mechanism(std::string_view text) {
  for (auto m : {Mechanism::Auto, Mechanism::Pre, Mechanism::In, Mechanism::Post, Mechanism::StrictIn})
    if (to_string(m) == text) return m;
  throw ParseError("unknown mechanism '" + std::string(text) + "'");
}

namespace {

// class 0: possibly valid or verified valid; class 1: bridge or verified invalid.
struct PoolEntry {
  NodeId id;
  float adc;
  std::uint8_t cls;
  bool explored;
};

bool plain_before(const PoolEntry& a, const PoolEntry& b) {
  return a.adc < b.adc || (a.adc == b.adc && a.id < b.id);
}

template <typename Less>
void pool_insert(std::vector<PoolEntry>& pool, PoolEntry e, Less less) {
  pool.insert(std::upper_bound(pool.begin(), pool.end(), e, less), e);
}

std::size_t first_unexplored(const std::vector<PoolEntry>& pool) {
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!pool[i].explored) return i;
  return pool.size();
}

std::vector<Hit> top_k(std::vector<Hit> hits, std::size_t k) {
  std::sort(hits.begin(), hits.end());
  if (hits.size() > k) hits.resize(k);
  return hits;
}

}  // namespace

SearchEngine::SearchEngine(GraphIndex graph, PqCodebook codebook, PqCodes codes, AttributeIndexSet attrs)
    : graph_(std::move(graph)), codebook_(std::move(codebook)), codes_(std::move(codes)), attrs_(std::move(attrs)) {
  const auto& m = graph_.meta();
  if (codes_.size() != m.N || attrs_.size() != m.N) throw ShapeError("index components disagree on N");
  if (static_cast<std::uint32_t>(codebook_.dim) != m.dim || codes_.n_subspaces() != codebook_.n_subspaces)
    throw ShapeError("codebook does not match the graph");
}

SearchEngine SearchEngine::open(const std::filesystem::path& dir) {
  return SearchEngine(GraphIndex::open(dir / index_files::kGraph), load_codebook(dir / index_files::kCodebook),
                      load_codes(dir / index_files::kCodes), AttributeIndexSet::open(dir));
}

void SearchEngine::check_query(const Eigen::Ref<const Eigen::VectorXf>& query, const SearchParams& p) const {
  if (query.size() != static_cast<Eigen::Index>(meta().dim)) throw ShapeError("query dimension mismatch");
  if (p.k == 0 || p.L < p.k || p.effective_L_max() < p.L) throw ValidationError("need 0 < k <= L <= L_max");
}

RouteDecision SearchEngine::plan(const Selector& sel, const SearchParams& p) const {
  return route(sel, attrs_, meta(), p.L, p.router, p.io_budget_pages);
}

SearchResult SearchEngine::search(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                  const SearchParams& p) const {
  check_query(query, p);
  Mechanism m = p.mechanism;
  std::optional<RouteDecision> decision;
  if (m == Mechanism::Auto) {
    decision = plan(sel, p);
    m = decision->chosen == Route::Pre ? Mechanism::Pre : decision->chosen == Route::In ? Mechanism::In : Mechanism::Post;
  }
  SearchResult r;
  switch (m) {
    case Mechanism::Pre: r = search_pre(query, sel, p); break;
    case Mechanism::In: r = search_in(query, sel, p); break;
    case Mechanism::Post: r = search_post(query, sel, p); break;
    case Mechanism::StrictIn: r = search_in_strict_baseline(query, sel, p); break;
    case Mechanism::Auto: break;
  }
  r.decision = std::move(decision);
  return r;
}

SearchResult SearchEngine::search_pre(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                      const SearchParams& p) const {
  check_query(query, p);
  SearchResult r;
  r.mechanism_used = Mechanism::Pre;
  IoCounters& ctr = r.io;

  const auto superset = sel.pre_filter_approx(attrs_, ctr);
  const double p_pre = estimate_filter(sel, attrs_, p.io_budget_pages).precision_pre;
  const auto table = adc_table(codebook_, query);
  std::vector<Neighbor> scored;
  scored.reserve(superset.size());
  for (NodeId id : superset) scored.push_back({id, adc_distance(table, codes_[id])});
  ctr.pq_distances += superset.size();

  const auto want = static_cast<std::size_t>(std::ceil(static_cast<double>(p.L) / p_pre)) + p.k;
  const std::size_t C = std::min(scored.size(), want);
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(C), scored.end());

  std::vector<Hit> hits;
  for (std::size_t i = 0; i < C; ++i) {
    const auto rec = graph_.fetch_node(scored[i].id, false, ctr);
    if (sel.is_member(rec.attrs)) hits.push_back({rec.id, squared_l2(query, rec.vector)});
  }
  r.explored = C;
  r.hits = top_k(std::move(hits), p.k);
  return r;
}

SearchResult SearchEngine::search_post(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                       const SearchParams& p) const {
  check_query(query, p);
  SearchResult r;
  r.mechanism_used = Mechanism::Post;
  IoCounters& ctr = r.io;
  const auto table = adc_table(codebook_, query);
  const NodeId entry = meta().entry_node;

  std::vector<std::uint8_t> queued(meta().N, 0);
  std::vector<PoolEntry> pool;
  std::vector<PoolEntry> overflow;  // truncated out of the pool, kept for escalation
  std::vector<Hit> hits;

  queued[entry] = 1;
  pool.push_back({entry, adc_distance(table, codes_[entry]), 0, false});
  ++ctr.pq_distances;

  std::size_t L = p.L;
  for (;;) {
    for (std::size_t i = first_unexplored(pool); i < pool.size(); i = first_unexplored(pool)) {
      pool[i].explored = true;
      const auto rec = graph_.fetch_node(pool[i].id, false, ctr);
      ++r.explored;
      if (sel.is_member(rec.attrs)) hits.push_back({rec.id, squared_l2(query, rec.vector)});
      for (NodeId v : rec.direct_neighbors) {
        if (queued[v]) continue;
        queued[v] = 1;
        pool_insert(pool, {v, adc_distance(table, codes_[v]), 0, false}, plain_before);
        ++ctr.pq_distances;
      }
      if (pool.size() > L) {
        overflow.insert(overflow.end(), pool.begin() + static_cast<std::ptrdiff_t>(L), pool.end());
        pool.resize(L);
      }
    }
    if (hits.size() >= p.k) break;
    L *= 2;
    if (L > p.effective_L_max()) break;
    ++r.escalations;
    pool.insert(pool.end(), overflow.begin(), overflow.end());
    overflow.clear();
    std::sort(pool.begin(), pool.end(), plain_before);
    if (pool.size() > L) {
      overflow.assign(pool.begin() + static_cast<std::ptrdiff_t>(L), pool.end());
      pool.resize(L);
    }
  }
  r.hits = top_k(std::move(hits), p.k);
  return r;
}

SearchResult SearchEngine::search_in(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                     const SearchParams& p) const {
  check_query(query, p);
  return traverse_filtered(query, sel, p, false);
}

SearchResult SearchEngine::search_in_strict_baseline(const Eigen::Ref<const Eigen::VectorXf>& query,
                                                     const Selector& sel, const SearchParams& p) const {
  check_query(query, p);
  return traverse_filtered(query, sel, p, true);
}

SearchResult SearchEngine::traverse_filtered(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                             const SearchParams& p, bool strict) const {
  SearchResult r;
  r.mechanism_used = strict ? Mechanism::StrictIn : Mechanism::In;
  IoCounters& ctr = r.io;
  const auto& m = meta();

  std::optional<PreparedQuery> prepared;
  double s_est = 1.0;
  if (strict) {
    s_est = estimate_filter(sel, attrs_, p.io_budget_pages).selectivity;
  } else {
    prepared.emplace(prepare_query(sel, attrs_, p.io_budget_pages, ctr));
    s_est = sel.estimate(attrs_, prepared->plan()).selectivity;
  }
  const double L = static_cast<double>(p.L);
  const auto cap = static_cast<std::size_t>(
      std::min(std::ceil(L / kSelectivityFloor), std::max(std::ceil(10.0 * L / s_est), double(kMinFetchCap))));

  // Bridges widen the pool to the effective length L R / (s R_d) when
  // possibly-valid neighbors cannot fill R slots per explored node.
  const auto bridge_window = static_cast<std::size_t>(std::max(
      L, std::ceil(L * m.R / (std::max(s_est, kSelectivityFloor) * m.R_d))));

  // 0 unknown, 1 passes, 2 fails. Each node is checked at most once per query.
  std::vector<std::uint8_t> verdict(m.N, 0);
  auto passes = [&](NodeId v) {
    if (verdict[v] == 0) {
      bool ok;
      if (strict) {
        ok = sel.is_member(graph_.read_attributes(v, ctr));
      } else {
        ok = prepared->is_member_approx(v);
        ++ctr.approx_checks;
      }
      verdict[v] = ok ? 1 : 2;
    }
    return verdict[v] == 1;
  };

  const auto table = adc_table(codebook_, query);
  std::vector<std::uint8_t> queued(m.N, 0);
  // Possibly-valid window (unexplored candidates and verified-valid nodes)
  // and bridge window (approx-rejected neighbors and verified-invalid nodes),
  // capped at L and bridge_window by ADC distance.
  std::vector<PoolEntry> valid_pool, bridge_pool;
  std::vector<Hit> hits;
  auto enqueue = [&](NodeId v, bool possibly_valid) {
    queued[v] = 1;
    ++ctr.pq_distances;
    const PoolEntry e{v, adc_distance(table, codes_[v]), static_cast<std::uint8_t>(possibly_valid ? 0 : 1), false};
    pool_insert(possibly_valid ? valid_pool : bridge_pool, e, plain_before);
  };
  enqueue(m.entry_node, passes(m.entry_node));

  std::vector<NodeId> picks, bridges;
  for (;;) {
    std::vector<PoolEntry>* from = &valid_pool;
    std::size_t i = first_unexplored(valid_pool);
    if (i == valid_pool.size()) {
      from = &bridge_pool;
      i = first_unexplored(bridge_pool);
      if (i == bridge_pool.size()) break;
      // Full, fully verified valid window: only bridges closer than its worst
      // entry can still lead to closer valid vectors.
      if (valid_pool.size() >= p.L && !plain_before(bridge_pool[i], valid_pool.back())) break;
    }
    if (r.explored >= cap) {
      r.capped = true;
      break;
    }
    PoolEntry e = (*from)[i];
    from->erase(from->begin() + static_cast<std::ptrdiff_t>(i));
    e.explored = true;
    const auto rec = graph_.fetch_node(e.id, true, ctr);
    ++r.explored;
    if (sel.is_member(rec.attrs)) {
      hits.push_back({rec.id, squared_l2(query, rec.vector)});
      e.cls = 0;
    } else {
      e.cls = 1;
    }
    pool_insert(e.cls == 0 ? valid_pool : bridge_pool, e, plain_before);

    // Up to R possibly-valid neighbors fill the slots, queued or not; only
    // slots they leave empty are padded with invalid direct neighbors.
    picks.clear();
    bridges.clear();
    std::size_t slots = 0;
    for (NodeId v : rec.direct_neighbors) {
      if (passes(v)) {
        if (slots < m.R) {
          ++slots;
          if (!queued[v]) picks.push_back(v);
        }
      } else if (!strict && p.bridge_padding && !queued[v]) {
        bridges.push_back(v);
      }
    }
    for (NodeId v : rec.dense_neighbors) {
      if (slots >= m.R) break;
      if (passes(v)) {
        ++slots;
        if (!queued[v]) picks.push_back(v);
      }
    }
    const std::size_t room = m.R - slots;
    if (bridges.size() > room) bridges.resize(room);

    for (NodeId v : picks) enqueue(v, true);
    for (NodeId v : bridges) enqueue(v, false);
    if (valid_pool.size() > p.L) valid_pool.resize(p.L);
    if (bridge_pool.size() > bridge_window) bridge_pool.resize(bridge_window);
  }
  r.hits = top_k(std::move(hits), p.k);
  return r;
}

}  // namespace spf
