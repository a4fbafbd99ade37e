// End-to-end acceptance run on the default 100k corpus. Prints one PASS/FAIL
// line per criterion and exits nonzero if any fails.
//
// SPF_ACCEPTANCE_DIR overrides the scratch root (default ./acceptance_data);
// SPF_ACCEPTANCE_REUSE=1 reuses a completed corpus from an earlier run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "spfann/bench.hpp"
#include "spfann/cost_router.hpp"
#include "spfann/search_engine.hpp"
#include "support.hpp"

using namespace spf;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 42;
constexpr std::size_t kQueriesPerGroup = 50;
constexpr std::size_t kK = 10;
constexpr std::size_t kL = 100;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

struct Corpus {
  Dataset ds;
  Workload w;
  std::vector<TruthEntry> truth;
  std::optional<SearchEngine> engine;
};

// The full pipeline: dataset, workload, ground truth, graph, PQ and
// attribute indexes, then one auto-routed benchmark written to report.json.
Corpus build_corpus(const fs::path& dir, bool reuse) {
  Corpus c;
  const auto marker = dir / "complete";
  if (reuse && fs::exists(marker)) {
    std::cout << "reusing corpus in " << dir << "\n";
    c.ds = load_dataset(dir);
    c.w = load_workload(dir);
    c.truth = load_truth(dir / "truth.csv");
    c.engine.emplace(SearchEngine::open(dir / "index"));
    return c;
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();

  DatasetSpec spec;
  spec.seed = kSeed;
  c.ds = generate_dataset(spec);
  save_dataset(c.ds, dir);

  WorkloadSpec ws;
  ws.queries_per_group = kQueriesPerGroup;
  ws.groups = parse_workload_groups(kDefaultWorkload);
  ws.seed = kSeed;
  c.w = generate_queries(c.ds, ws);
  save_workload(c.w, dir);

  c.truth = ground_truth(c.ds, c.w, kK, 1);
  save_truth(c.truth, dir / "truth.csv");

  IndexBuildConfig cfg;
  cfg.graph.seed = kSeed;
  build_index(c.ds, cfg, dir / "index");
  build_attrs(c.ds, kSeed, dir / "index");
  c.engine.emplace(SearchEngine::open(dir / "index"));

  BenchOptions opts;
  opts.params.k = kK;
  opts.params.L = kL;
  const auto rep = run_bench(*c.engine, c.ds, c.w, c.truth, opts);
  std::ostringstream json;
  write_report_json(json, rep);
  write_text(dir / "report.json", json.str());
  write_text(marker, "");
  std::cout << "built corpus in " << dir << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";
  return c;
}

BenchReport bench_with(const Corpus& c, Mechanism m, std::size_t L = kL) {
  BenchOptions opts;
  opts.params.k = kK;
  opts.params.L = L;
  opts.params.mechanism = m;
  return run_bench(*c.engine, c.ds, c.w, c.truth, opts);
}

class Report {
 public:
  void line(int id, bool pass, const std::string& name, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
    failed_ += !pass;
  }
  int failed() const { return failed_; }

 private:
  int failed_ = 0;
};

struct BandMean {
  double sum = 0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

int main() {
  const char* root_env = std::getenv("SPF_ACCEPTANCE_DIR");
  const fs::path root = root_env ? root_env : "acceptance_data";
  const char* reuse_env = std::getenv("SPF_ACCEPTANCE_REUSE");
  const bool reuse = reuse_env && std::string(reuse_env) == "1";
  Report out;

  Corpus c;
  try {
    c = build_corpus(root / "a", reuse);
  } catch (const std::exception& e) {
    std::cout << "corpus build failed: " << e.what() << "\n";
    return 1;
  }
  const auto& engine = *c.engine;
  const auto& idx = engine.attrs();
  const auto N = static_cast<double>(c.ds.attrs.size());
  std::cout << "corpus: N=" << c.ds.attrs.size() << " queries=" << c.w.queries.size() << "\n";

  // 1. Superset soundness of the approximate check and the batched scans.
  {
    const auto t0 = Clock::now();
    std::size_t approx_misses = 0, scan_misses = 0;
    std::map<QueryKind, std::size_t> kinds;
    for (const auto& q : c.w.queries) {
      ++kinds[q.kind];
      IoCounters ctr;
      const auto prepared = prepare_query(*q.selector, idx, kDefaultIoBudgetPages, ctr);
      const auto superset = q.selector->pre_filter_approx(idx, ctr);
      for (NodeId v = 0; v < c.ds.attrs.size(); ++v) {
        if (!q.selector->is_member(c.ds.attrs[v])) continue;
        approx_misses += !prepared.is_member_approx(v);
        scan_misses += !std::binary_search(superset.begin(), superset.end(), v);
      }
    }
    const double secs = seconds_since(t0);
    const bool pass = approx_misses == 0 && scan_misses == 0 && c.w.queries.size() >= 1000 && kinds.size() == 5 &&
                      secs < 120;
    out.line(1, pass, "superset soundness",
             std::to_string(c.w.queries.size()) + " queries over " + std::to_string(kinds.size()) + " kinds, " +
                 std::to_string(approx_misses) + " approximate-check misses, " + std::to_string(scan_misses) +
                 " scan misses, " + fmt("%.1f s", secs));
  }

  // Forced-mechanism runs shared by criteria 2, 4, 6 and 7.
  const auto t_in = Clock::now();
  const auto in_rep = bench_with(c, Mechanism::In);
  const double in_secs = seconds_since(t_in);
  const auto t_pre = Clock::now();
  const auto pre_rep = bench_with(c, Mechanism::Pre);
  const double pre_secs = seconds_since(t_pre);
  const auto t_post = Clock::now();
  const auto post_rep = bench_with(c, Mechanism::Post);
  const double post_secs = seconds_since(t_post);
  const auto auto_rep = bench_with(c, Mechanism::Auto);
  const auto strict_rep = bench_with(c, Mechanism::StrictIn);

  // 2. Every hit on every path satisfies the filter.
  {
    std::size_t violations = 0, hits = 0;
    for (const auto* r : {&in_rep, &pre_rep, &post_rep, &auto_rep, &strict_rep}) {
      violations += r->soundness_violations;
      for (const auto& q : r->records) hits += q.hits.size();
    }
    out.line(2, violations == 0, "result soundness",
             std::to_string(violations) + " violations among " + std::to_string(hits) +
                 " hits from pre, in, post, auto and strict runs");
  }

  // 3. Cost formulas against an independent transcription.
  {
    const auto t0 = Clock::now();
    Rng rng(3);
    std::size_t bad = 0, low = 0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    for (int t = 0; t < 1000; ++t) {
      CostInputs x;
      x.N = 1e3 + rng.uniform() * 1e8;
      x.s = std::pow(10.0, -5 * rng.uniform());
      x.p_pre = 0.01 + 0.99 * rng.uniform();
      x.p_in = 0.01 + 0.99 * rng.uniform();
      x.X_pre = std::floor(rng.uniform() * 5000);
      x.X_in = std::floor(rng.uniform() * 16);
      x.L = 10 + std::floor(rng.uniform() * 400);
      x.R = 16 + std::floor(rng.uniform() * 48);
      x.R_d = x.R * (10 + std::floor(rng.uniform() * 11));
      x.S_r = 1 + std::floor(rng.uniform() * 2);
      x.S_d = x.S_r + 1;
      x.gamma = 0.05;
      if (t % 10 == 0) x.s = x.R * x.p_in / x.R_d;  // on the regime boundary
      const RouterConfig cfg;

      const double pre_io = x.X_pre + (x.L / x.p_pre) * x.S_r, pre_c = x.s * x.N / x.p_pre;
      const bool in_low = x.s * x.R_d / x.p_in <= x.R;
      const double in_io = in_low ? x.X_in + (x.L / x.s) * (x.R / x.R_d) * x.S_d : x.X_in + (x.L / x.p_in) * x.S_d;
      const double in_c = in_low ? ((x.L / x.s) * (x.R / x.R_d) + x.gamma * x.L / x.s) * x.R
                                 : (x.L / x.p_in) * (x.R + x.gamma * x.R_d);
      const double post_io = (x.L / x.s) * x.S_r, post_c = (x.L / x.s) * x.R;

      const auto pre = estimate_pre(x, cfg), in = estimate_in(x, cfg), post = estimate_post(x, cfg);
      low += in_low;
      const bool ok = rel(pre.est_io_pages, pre_io) <= 1e-9 && rel(pre.est_compute, pre_c) <= 1e-9 &&
                      rel(in.est_io_pages, in_io) <= 1e-9 && rel(in.est_compute, in_c) <= 1e-9 &&
                      rel(post.est_io_pages, post_io) <= 1e-9 && rel(post.est_compute, post_c) <= 1e-9 &&
                      (in.mechanism == CostMechanism::InLow) == in_low &&
                      rel(pre.total, 10 * pre_io + pre_c) <= 1e-9 && rel(in.total, 10 * in_io + in_c) <= 1e-9 &&
                      rel(post.total, 10 * post_io + post_c) <= 1e-9;
      bad += !ok;
    }
    const double secs = seconds_since(t0);
    out.line(3, bad == 0 && secs < 1.0, "cost formula fidelity",
             std::to_string(1000 - bad) + "/1000 inputs within 1e-9 relative (" + std::to_string(low) +
                 " in the bridge-bound regime), " + fmt("%.3f s", secs));
  }

  // 4. Estimated vs measured in-filtering pages.
  {
    std::vector<double> ratios;
    for (std::size_t i = 0; i < c.w.queries.size(); ++i) {
      const auto& q = c.w.queries[i];
      if (q.measured < 0.01 || q.measured > 0.5) continue;
      const auto& rec = in_rep.records[i];
      if (rec.io.pages_read == 0) continue;
      ratios.push_back(in_rep.decisions[i].in.est_io_pages / static_cast<double>(rec.io.pages_read));
    }
    std::sort(ratios.begin(), ratios.end());
    const double median = ratios.empty() ? 0.0 : ratios[ratios.size() / 2];
    const bool pass = !ratios.empty() && median >= 0.5 && median <= 3.0 && in_secs < 300;
    out.line(4, pass, "cost-model calibration",
             "median estimated/measured pages " + fmt("%.3f", median) + " over " + std::to_string(ratios.size()) +
                 " in-filtering queries with s in [0.01, 0.5] (range " +
                 fmt("%.3f", ratios.empty() ? 0.0 : ratios.front()) + " .. " +
                 fmt("%.3f", ratios.empty() ? 0.0 : ratios.back()) + ")");
  }

  // 5. Routing at the selectivity extremes.
  {
    const auto t0 = Clock::now();
    std::size_t low_n = 0, low_ok = 0, high_n = 0, high_ok = 0;
    SearchParams p;
    p.k = kK;
    p.L = kL;
    for (const auto& q : c.w.queries) {
      if (q.measured <= 0.001) {
        ++low_n;
        low_ok += engine.plan(*q.selector, p).chosen == Route::Pre;
      } else if (q.measured >= 0.5) {
        ++high_n;
        high_ok += engine.plan(*q.selector, p).chosen != Route::Pre;
      }
    }
    const double secs = seconds_since(t0);
    const double lf = low_n ? static_cast<double>(low_ok) / static_cast<double>(low_n) : 0.0;
    const double hf = high_n ? static_cast<double>(high_ok) / static_cast<double>(high_n) : 0.0;
    out.line(5, low_n > 0 && high_n > 0 && lf >= 0.95 && hf >= 0.95 && secs < 60, "routing sanity",
             std::to_string(low_ok) + "/" + std::to_string(low_n) + " queries at s <= 0.001 routed to pre, " +
                 std::to_string(high_ok) + "/" + std::to_string(high_n) + " at s >= 0.5 routed elsewhere");
  }

  // 6. Recall per (kind, target) group inside each mechanism's band.
  {
    struct Band {
      const char* name;
      const BenchReport* rep;
      std::function<bool(double)> in_band;
      double floor;
    };
    const std::vector<Band> bands{
        {"in", &in_rep, [](double s) { return s >= 0.01 && s <= 0.5; }, 0.9},
        {"pre", &pre_rep, [](double s) { return s <= 0.005; }, 0.95},
        {"post", &post_rep, [](double s) { return s >= 0.3; }, 0.9},
    };
    bool pass = in_secs + pre_secs + post_secs < 600;
    std::string detail;
    for (const auto& b : bands) {
      std::map<std::pair<int, double>, BandMean> groups;
      BandMean all;
      for (const auto& r : b.rep->records) {
        if (!b.in_band(r.measured)) continue;
        groups[{static_cast<int>(r.kind), r.target}].add(r.recall);
        all.add(r.recall);
      }
      double worst = 1.0;
      std::string worst_name;
      for (const auto& [key, m] : groups) {
        if (m.mean() < worst) {
          worst = m.mean();
          worst_name = std::string(to_string(static_cast<QueryKind>(key.first))) + " " + fmt("%g", key.second);
        }
      }
      pass = pass && all.n > 0 && worst >= b.floor;
      detail += std::string(detail.empty() ? "" : "; ") + b.name + " mean " + fmt("%.3f", all.mean()) + " over " +
                std::to_string(all.n) + ", worst group " + worst_name + " " + fmt("%.3f", worst) + " (floor " +
                fmt("%.2f", b.floor) + ")";
    }
    out.line(6, pass, "recall10@10 at L=100", detail);
  }

  // 7. In- and post-filtering never read attributes on their own.
  {
    std::uint64_t attr_pages = 0;
    for (const auto* r : {&in_rep, &post_rep})
      for (const auto& q : r->records) attr_pages += q.io.attr_pages_read;
    std::uint64_t strict_attr = 0;
    for (const auto& q : strict_rep.records) strict_attr += q.io.attr_pages_read;
    out.line(7, attr_pages == 0, "free verification",
             std::to_string(attr_pages) + " attribute-only pages in in/post runs (strict baseline: " +
                 std::to_string(strict_attr) + ")");
  }

  // 8. Strict vs speculative in-filtering at s = 0.1, each at the smallest L
  // on the ladder reaching mean recall 0.9.
  {
    const auto t0 = Clock::now();
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < c.w.queries.size(); ++i)
      if (std::abs(c.w.queries[i].target - 0.1) < 1e-12) ids.push_back(i);
    const std::vector<std::size_t> ladder{10, 20, 30, 50, 70, 100, 150, 200, 300, 500};
    auto matched = [&](bool strict) {
      for (std::size_t L : ladder) {
        SearchParams p;
        p.k = kK;
        p.L = std::max(L, kK);
        double recall = 0, pages = 0;
        for (std::size_t i : ids) {
          const auto& q = c.w.queries[i];
          const Eigen::VectorXf v = c.w.vectors.row(q.vector_ref).transpose();
          const auto r = strict ? engine.search_in_strict_baseline(v, *q.selector, p)
                                : engine.search_in(v, *q.selector, p);
          recall += recall_at_k(r.hits, c.truth[i], kK);
          pages += static_cast<double>(r.io.pages_read);
        }
        recall /= static_cast<double>(ids.size());
        if (recall >= 0.9) return std::tuple{L, recall, pages / static_cast<double>(ids.size())};
      }
      return std::tuple{std::size_t{0}, 0.0, 0.0};
    };
    const auto [L_in, r_in, p_in] = matched(false);
    const auto [L_st, r_st, p_st] = matched(true);
    const double ratio = p_in > 0 ? p_st / p_in : 0.0;
    const double secs = seconds_since(t0);
    out.line(8, L_in && L_st && ratio >= 5.0 && secs < 300, "strict vs speculative I/O",
             std::to_string(ids.size()) + " queries at s=0.1: speculative L=" + std::to_string(L_in) + " recall " +
                 fmt("%.3f", r_in) + " pages " + fmt("%.0f", p_in) + "; strict L=" + std::to_string(L_st) +
                 " recall " + fmt("%.3f", r_st) + " pages " + fmt("%.0f", p_st) + "; ratio " + fmt("%.1fx", ratio) +
                 ", " + fmt("%.0f s", secs));
  }

  // 9. Bloom false-positive rate at 10 labels per vector.
  {
    const auto t0 = Clock::now();
    const std::size_t n = 100'000;
    VectorBloom bloom(n, 2, kSeed);
    Rng rng(9);
    std::vector<std::array<LabelId, 10>> sets(n);
    for (NodeId v = 0; v < n; ++v) {
      for (std::size_t j = 0; j < 10; ++j) {
        LabelId l;
        do {
          l = static_cast<LabelId>(rng.below(1'000'000));
        } while (std::find(sets[v].begin(), sets[v].begin() + static_cast<std::ptrdiff_t>(j), l) !=
                 sets[v].begin() + static_cast<std::ptrdiff_t>(j));
        sets[v][j] = l;
        bloom.insert(v, l);
      }
    }
    std::size_t fp = 0;
    const std::size_t trials = 1'000'000;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto v = static_cast<NodeId>(rng.below(n));
      // Absent by construction: stored labels are below 10^6.
      fp += bloom.might_contain(v, static_cast<LabelId>(1'000'000 + rng.below(1'000'000)));
    }
    const double measured = static_cast<double>(fp) / static_cast<double>(trials);
    const double analytic = bloom_false_positive_rate(10, 32, 2);
    const double secs = seconds_since(t0);
    out.line(9, std::abs(measured - analytic) <= 0.5 * analytic && secs < 60, "bloom calibration",
             "measured " + fmt("%.4f", measured) + " vs analytic " + fmt("%.4f", analytic) + " over 10^6 trials");
  }

  // 10. Bridges reconnect two valid components.
  {
    const auto t0 = Clock::now();
    test::TempDir dir("acceptance_bridge");
    RowMatrixXf vectors = RowMatrixXf::Zero(12, 2);
    std::vector<AttrMap> attrs(12);
    Adjacency direct(12), dense(12);
    for (NodeId v = 0; v < 12; ++v) {
      vectors(v, 0) = static_cast<float>(v);
      if (v != 5 && v != 6) attrs[v].labels = {1};
      if (v > 0) direct[v].push_back(v - 1);
      if (v < 11) direct[v].push_back(v + 1);
    }
    const auto fixture = test::make_engine(dir.path(), vectors, attrs, direct, dense, 0, 2, 20, 2);
    const auto sel = label_and({1});
    const Eigen::Vector2f q(11.0f, 0.0f);
    SearchParams p;
    p.k = 3;
    p.L = 10;
    auto far_hits = [](const SearchResult& r) {
      return std::count_if(r.hits.begin(), r.hits.end(), [](const Hit& h) { return h.id >= 7; });
    };
    const auto with = fixture.search_in(q, *sel, p);
    p.bridge_padding = false;
    const auto without = fixture.search_in(q, *sel, p);
    const double secs = seconds_since(t0);
    out.line(10, far_hits(with) == 3 && far_hits(without) == 0 && secs < 1.0, "bridge connectivity",
             "far-component hits with bridges " + std::to_string(far_hits(with)) + "/3, without " +
                 std::to_string(far_hits(without)) + "/3");
  }

  // 11. In-memory filter and summary footprint.
  {
    const std::size_t bytes = idx.memory_bytes();
    const std::size_t vocab = idx.labels().vocab_size();
    const std::size_t bound = 5 * c.ds.attrs.size() + 32 * vocab + 4 * 1257;
    out.line(11, bytes <= bound, "memory footprint",
             std::to_string(bytes) + " bytes (" + fmt("%.2f", static_cast<double>(bytes) / N) +
                 " per vector; bloom " + std::to_string(idx.bloom().memory_bytes()) + ", range " +
                 std::to_string(idx.range().memory_bytes()) + ", label directory and stats " +
                 std::to_string(idx.labels().memory_bytes() + idx.stats().memory_bytes()) + ") <= bound " +
                 std::to_string(bound));
  }

  // 12. A second full regeneration reproduces report.json byte for byte.
  {
    bool pass = false;
    std::string detail;
    try {
      { build_corpus(root / "b", false); }
      const auto a = slurp(root / "a" / "report.json");
      const auto b = slurp(root / "b" / "report.json");
      pass = !a.empty() && a == b;
      detail = "report.json " + std::to_string(a.size()) + " bytes, " + (pass ? "identical" : "different");
      std::ostringstream again;
      write_report_json(again, auto_rep);
      const bool rerun_same = again.str() == a;
      pass = pass && rerun_same;
      detail += rerun_same ? "; in-process rerun identical" : "; in-process rerun differs";
      fs::remove_all(root / "b");
    } catch (const std::exception& e) {
      detail = std::string("regeneration failed: ") + e.what();
    }
    out.line(12, pass, "determinism", detail);
  }

  std::cout << (out.failed() ? std::to_string(out.failed()) + " criteria failed" : "all criteria passed") << "\n";
  return out.failed() ? 1 : 0;
}
