#include "spfann/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "spfann/attr_index.hpp"
#include "spfann/errors.hpp"
#include "spfann/format.hpp"
#include "spfann/page_store.hpp"
#include "spfann/quantizer.hpp"

namespace spf {

namespace {

constexpr Magic kAttrMagic = make_magic("SPFATTR1");
constexpr float kCenterScale = 0.25f;
constexpr float kQueryNoise = 0.5f;
// Within-component standard deviation of dimension d is exp(-d / kSpectrumDecay):
// low intrinsic dimension, as in learned embeddings.
constexpr double kSpectrumDecay = 10.0;

float component_std(Eigen::Index d) { return static_cast<float>(std::exp(-static_cast<double>(d) / kSpectrumDecay)); }

// Runs fn(i) for i in [0, n) on `threads` workers pulling from a shared index.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto body = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, const char* what) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(std::string("bad ") + what + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

// ---- datasets ----

void DatasetSpec::validate() const {
  if (N < 2) throw ValidationError("dataset needs N >= 2");
  if (dim == 0 || n_clusters == 0 || label_vocab == 0) throw ValidationError("dataset counts must be positive");
  if (!(label_zipf_s > 0)) throw ValidationError("zipf exponent must be positive");
  if (!(labels_per_vector_mean >= 1.0) || labels_per_vector_mean > label_vocab)
    throw ValidationError("labels_per_vector_mean must lie in [1, label_vocab]");
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.vocab_size = spec.label_vocab;
  ds.vectors.resize(spec.N, spec.dim);
  ds.attrs.resize(spec.N);

  Rng center_rng(mix64(spec.seed, 1));
  RowMatrixXf centers(spec.n_clusters, spec.dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i)
    centers.data()[i] = kCenterScale * static_cast<float>(center_rng.normal());

  std::vector<double> zipf_cdf(spec.label_vocab);
  double total = 0;
  for (std::uint32_t r = 0; r < spec.label_vocab; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), spec.label_zipf_s);
    zipf_cdf[r] = total;
  }

  Rng vec_rng(mix64(spec.seed, 2));
  Rng label_rng(mix64(spec.seed, 3));
  Rng value_rng(mix64(spec.seed, 4));
  for (std::uint32_t i = 0; i < spec.N; ++i) {
    const auto c = static_cast<Eigen::Index>(vec_rng.below(spec.n_clusters));
    for (std::uint32_t d = 0; d < spec.dim; ++d)
      ds.vectors(i, d) = centers(c, d) + component_std(d) * static_cast<float>(vec_rng.normal());

    auto& labels = ds.attrs[i].labels;
    const auto want = std::min<std::uint32_t>(spec.label_vocab, 1 + label_rng.poisson(spec.labels_per_vector_mean - 1.0));
    while (labels.size() < want) {
      const double u = label_rng.uniform() * total;
      auto l = static_cast<LabelId>(std::upper_bound(zipf_cdf.begin(), zipf_cdf.end(), u) - zipf_cdf.begin());
      l = std::min(l, spec.label_vocab - 1);
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    }
    std::sort(labels.begin(), labels.end());

    const double u = value_rng.uniform();
    ds.attrs[i].value = spec.range_dist == RangeDist::Uniform
                            ? static_cast<float>(u)
                            : static_cast<float>((static_cast<double>(c) + u) / spec.n_clusters);
  }
  return ds;
}

void save_fbin(const RowMatrixXf& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(m.rows()));
  w.put(static_cast<std::uint32_t>(m.cols()));
  w.put_array(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  write_file(path, w.bytes());
}

RowMatrixXf load_fbin(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  const auto n = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  if (r.remaining() != std::uint64_t{n} * dim * sizeof(float))
    throw CorruptionError(path.string() + ": size does not match header");
  RowMatrixXf m(n, dim);
  r.get_array(std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
  return m;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_fbin(ds.vectors, dir / "base.fbin");
  ByteWriter w;
  w.put_magic(kAttrMagic);
  w.put(static_cast<std::uint32_t>(ds.attrs.size()));
  w.put(ds.vocab_size);
  for (const auto& a : ds.attrs) encode_attrs(a, w);
  write_file(dir / "attrs.bin", w.bytes());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.vectors = load_fbin(dir / "base.fbin");
  const auto bytes = read_file(dir / "attrs.bin");
  ByteReader r(bytes);
  r.expect_magic(kAttrMagic, (dir / "attrs.bin").string());
  const auto n = r.get<std::uint32_t>();
  ds.vocab_size = r.get<std::uint32_t>();
  if (n != ds.vectors.rows()) throw CorruptionError("attrs.bin and base.fbin disagree on N");
  ds.attrs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.attrs.push_back(decode_attrs(r));
  return ds;
}

// ---- workloads ----

std::string_view to_string(QueryKind k) {
  switch (k) {
    case QueryKind::Label: return "Label";
    case QueryKind::LabelAnd: return "LabelAnd";
    case QueryKind::LabelOr: return "LabelOr";
    case QueryKind::Range: return "Range";
    case QueryKind::Hybrid: return "Hybrid";
  }
  return "?";
}

QueryKind parse_query_kind(std::string_view text) {
  for (auto k : {QueryKind::Label, QueryKind::LabelAnd, QueryKind::LabelOr, QueryKind::Range, QueryKind::Hybrid})
    if (to_string(k) == text) return k;
  throw ParseError("unknown query kind '" + std::string(text) + "'");
}

std::vector<WorkloadGroup> parse_workload_groups(std::string_view text) {
  std::vector<WorkloadGroup> out;
  for (const auto& part : split(text, ';')) {
    if (part.empty()) continue;
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ParseError("workload group '" + part + "' needs Kind:targets");
    const auto kind = parse_query_kind(std::string_view(part).substr(0, colon));
    for (const auto& t : split(std::string_view(part).substr(colon + 1), ','))
      out.push_back({kind, parse_number<double>(t, "target selectivity")});
  }
  return out;
}

void WorkloadSpec::validate() const {
  if (groups.empty()) throw ValidationError("workload has no groups");
  for (const auto& g : groups)
    if (!(g.target > 0 && g.target <= 1)) throw ValidationError("target selectivities must lie in (0, 1]");
  if (max_attempts < 1 || !(tolerance >= 0)) throw ValidationError("bad workload tolerance or attempt count");
}

double measure_selectivity(const Dataset& ds, const Selector& sel) {
  std::size_t hits = 0;
  for (const auto& a : ds.attrs) hits += sel.is_member(a);
  return ds.attrs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ds.attrs.size());
}

namespace {

class QueryProposer {
 public:
  explicit QueryProposer(const Dataset& ds) : ds_(ds), freq_(ds.vocab_size, 0) {
    for (const auto& a : ds.attrs)
      for (LabelId l : a.labels) ++freq_[l];
    values_.reserve(ds.attrs.size());
    for (const auto& a : ds.attrs) values_.push_back(a.value);
    std::sort(values_.begin(), values_.end());
  }

  SelectorPtr propose(QueryKind kind, double t, Rng& rng) const {
    switch (kind) {
      case QueryKind::Label: {
        auto l = pick_label(rng, 0.7 * t, 1.3 * t, {});
        return l ? label_and({*l}) : nullptr;
      }
      case QueryKind::LabelAnd: {
        auto a = pick_label(rng, t, 1.0, {});
        if (!a) return nullptr;
        const double want = t / s(*a);
        auto b = pick_label(rng, 0.6 * want, 1.6 * want, {*a});
        return b ? label_and({*a, *b}) : nullptr;
      }
      case QueryKind::LabelOr: {
        const int n = 2 + static_cast<int>(rng.below(2));
        const double per = 1.0 - std::pow(1.0 - t, 1.0 / n);
        std::vector<LabelId> picked;
        for (int i = 0; i < n; ++i) {
          auto l = pick_label(rng, 0.5 * per, 1.5 * per, picked);
          if (!l) return nullptr;
          picked.push_back(*l);
        }
        return label_or(picked);
      }
      case QueryKind::Range:
        return range_with_fraction(t, rng);
      case QueryKind::Hybrid: {
        if (rng.below(2) == 0) {
          if (auto a = pick_label(rng, t, 1.0, {})) return all_of({label_and({*a}), range_with_fraction(t / s(*a), rng)});
        }
        auto a = pick_label(rng, 0.2 * t, 0.8 * t, {});
        if (!a) return nullptr;
        const double rest = 1.0 - (1.0 - t) / (1.0 - s(*a));
        return any_of({label_or({*a}), range_with_fraction(rest, rng)});
      }
    }
    return nullptr;
  }

 private:
  double s(LabelId l) const { return static_cast<double>(freq_[l]) / static_cast<double>(ds_.attrs.size()); }

  std::optional<LabelId> pick_label(Rng& rng, double lo, double hi, const std::vector<LabelId>& exclude) const {
    std::vector<LabelId> band;
    for (LabelId l = 0; l < freq_.size(); ++l) {
      const double sl = s(l);
      if (sl >= lo && sl <= hi && freq_[l] > 0 && std::find(exclude.begin(), exclude.end(), l) == exclude.end())
        band.push_back(l);
    }
    if (band.empty()) return std::nullopt;
    return band[rng.below(band.size())];
  }

  SelectorPtr range_with_fraction(double frac, Rng& rng) const {
    const std::size_t n = values_.size();
    const float past_max = std::nextafter(values_.back(), std::numeric_limits<float>::infinity());
    const auto k = static_cast<std::size_t>(std::clamp(std::llround(frac * static_cast<double>(n)), 0LL,
                                                       static_cast<long long>(n)));
    if (k >= n) return range(values_.front(), past_max);
    const std::size_t start = rng.below(n - k + 1);
    const float l = values_[start];
    const float r = start + k < n ? values_[start + k] : past_max;
    return range(l, r);
  }

  const Dataset& ds_;
  std::vector<std::uint32_t> freq_;
  std::vector<float> values_;
};

}  // namespace

Workload generate_queries(const Dataset& ds, const WorkloadSpec& spec) {
  spec.validate();
  const QueryProposer proposer(ds);
  const auto n = static_cast<std::uint64_t>(ds.vectors.rows());
  const auto dim = ds.vectors.cols();
  Workload w;
  w.vectors.resize(static_cast<Eigen::Index>(spec.groups.size() * spec.queries_per_group), dim);
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& g = spec.groups[gi];
    Rng rng(mix64(spec.seed, gi));
    for (std::size_t q = 0; q < spec.queries_per_group; ++q) {
      QuerySpec qs;
      qs.vector_ref = static_cast<std::uint32_t>(w.queries.size());
      qs.kind = g.kind;
      qs.target = g.target;
      const auto base = static_cast<Eigen::Index>(rng.below(n));
      for (Eigen::Index d = 0; d < dim; ++d)
        w.vectors(qs.vector_ref, d) = ds.vectors(base, d) + kQueryNoise * component_std(d) * static_cast<float>(rng.normal());
      for (int attempt = 0; attempt < spec.max_attempts && !qs.selector; ++attempt) {
        auto sel = proposer.propose(g.kind, g.target, rng);
        if (!sel) continue;
        const double m = measure_selectivity(ds, *sel);
        if (std::abs(m - g.target) <= spec.tolerance * g.target) {
          qs.selector = std::move(sel);
          qs.measured = m;
        }
      }
      if (!qs.selector) {
        throw GenerationError("no " + std::string(to_string(g.kind)) + " query reaches target selectivity " +
                              fmt_double(g.target) + " after " + std::to_string(spec.max_attempts) + " attempts");
      }
      w.queries.push_back(std::move(qs));
    }
  }
  return w;
}

void save_workload(const Workload& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_fbin(w.vectors, dir / "queries.fbin");
  std::ofstream os(dir / "queries.txt", std::ios::binary);
  for (const auto& q : w.queries) {
    os << q.vector_ref << ' ' << q.selector->to_string() << ' ' << to_string(q.kind) << ' ' << fmt_double(q.target)
       << ' ' << fmt_double(q.measured) << '\n';
  }
  if (!os) throw StorageError("cannot write " + (dir / "queries.txt").string());
}

Workload load_workload(const std::filesystem::path& dir) {
  Workload w;
  w.vectors = load_fbin(dir / "queries.fbin");
  std::ifstream is(dir / "queries.txt", std::ios::binary);
  if (!is) throw StorageError("cannot open " + (dir / "queries.txt").string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string ref, expr, kind, target, measured;
    ls >> ref >> expr >> kind >> target >> measured;
    if (expr.empty()) throw ParseError("query line needs a vector reference and an expression: '" + line + "'");
    QuerySpec q;
    q.vector_ref = parse_number<std::uint32_t>(ref, "vector reference");
    if (q.vector_ref >= w.vectors.rows()) throw ValidationError("query vector reference out of range");
    q.selector = parse_selector(expr);
    q.kind = kind.empty() ? QueryKind::Hybrid : parse_query_kind(kind);
    q.target = target.empty() ? 0.0 : parse_number<double>(target, "target");
    q.measured = measured.empty() ? 0.0 : parse_number<double>(measured, "measured selectivity");
    w.queries.push_back(std::move(q));
  }
  return w;
}

// ---- ground truth ----

std::vector<TruthEntry> ground_truth(const Dataset& ds, const Workload& w, std::size_t k, int threads) {
  std::vector<TruthEntry> truth(w.queries.size());
  parallel_for(w.queries.size(), threads, [&](std::size_t qi) {
    const auto& q = w.queries[qi];
    const auto query = w.vectors.row(q.vector_ref).transpose().eval();
    std::vector<Hit> valid;
    for (std::size_t i = 0; i < ds.attrs.size(); ++i) {
      if (!q.selector->is_member(ds.attrs[i])) continue;
      const Eigen::VectorXf v = ds.vectors.row(static_cast<Eigen::Index>(i)).transpose();
      valid.push_back({static_cast<NodeId>(i), squared_l2(query, v)});
    }
    const std::size_t take = std::min(k, valid.size());
    std::partial_sort(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(take), valid.end());
    truth[qi].valid_count = static_cast<std::uint32_t>(valid.size());
    for (std::size_t i = 0; i < take; ++i) truth[qi].ids.push_back(valid[i].id);
  });
  return truth;
}

void save_truth(const std::vector<TruthEntry>& truth, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  os << "query_id,valid_count,ids\n";
  for (std::size_t i = 0; i < truth.size(); ++i) {
    os << i << ',' << truth[i].valid_count << ',';
    for (std::size_t j = 0; j < truth[i].ids.size(); ++j) os << (j ? " " : "") << truth[i].ids[j];
    os << '\n';
  }
  if (!os) throw StorageError("cannot write " + path.string());
}

std::vector<TruthEntry> load_truth(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StorageError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<TruthEntry> truth;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw ParseError("truth line '" + line + "'");
    if (parse_number<std::size_t>(f[0], "query id") != truth.size()) throw ParseError("truth rows out of order");
    TruthEntry e;
    e.valid_count = parse_number<std::uint32_t>(f[1], "valid count");
    for (const auto& id : split(f[2], ' '))
      if (!id.empty()) e.ids.push_back(parse_number<NodeId>(id, "id"));
    truth.push_back(std::move(e));
  }
  return truth;
}

// ---- index build ----

IndexBuildSummary build_index(const Dataset& ds, const IndexBuildConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  IndexBuildSummary out;
  const auto graph = build_graph(ds.vectors, cfg.graph);
  out.reachable_fraction = graph.reachable_fraction;
  const auto dense = densify(graph.adjacency, cfg.graph.R, cfg.graph.R_d, cfg.graph.seed);
  out.meta = make_meta(static_cast<std::uint32_t>(ds.vectors.rows()), static_cast<std::uint32_t>(ds.vectors.cols()),
                       static_cast<std::uint32_t>(cfg.graph.R), static_cast<std::uint32_t>(cfg.graph.R_d), graph.entry,
                       cfg.attr_bytes_max);
  serialize_index(dir / index_files::kGraph, ds.vectors, ds.attrs, graph.adjacency, dense, out.meta);

  PqTrainStats stats;
  const auto cb = train_codebook(ds.vectors, cfg.pq_bytes, cfg.graph.seed, {}, &stats);
  out.pq_mse = stats.final_mse;
  save_codebook(cb, dir / index_files::kCodebook);
  save_codes(encode_all(cb, ds.vectors), dir / index_files::kCodes);
  return out;
}

void build_attrs(const Dataset& ds, std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  build_attr_indexes(ds.attrs, ds.vocab_size, seed, dir);
}

// ---- benchmark ----

double recall_at_k(const std::vector<Hit>& hits, const TruthEntry& truth, std::size_t k) {
  const std::size_t denom = std::min<std::size_t>(k, truth.valid_count);
  if (denom == 0) return 1.0;
  std::size_t found = 0;
  for (std::size_t i = 0; i < hits.size() && i < k; ++i)
    if (std::find(truth.ids.begin(), truth.ids.end(), hits[i].id) != truth.ids.end()) ++found;
  return static_cast<double>(found) / static_cast<double>(denom);
}

namespace {

using GroupKey = std::tuple<int, double, int>;

GroupKey key_of(const QueryRecord& r) {
  return {static_cast<int>(r.kind), r.target, static_cast<int>(r.mechanism)};
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace

std::vector<Aggregate> aggregate_records(const std::vector<QueryRecord>& records) {
  std::map<GroupKey, Aggregate> groups;
  for (const auto& r : records) {
    auto& a = groups[key_of(r)];
    a.kind = r.kind;
    a.target = r.target;
    a.mechanism = r.mechanism;
    ++a.count;
    a.mean_recall += r.recall;
    a.mean_pages_read += static_cast<double>(r.io.pages_read);
    a.mean_records_fetched += static_cast<double>(r.io.records_fetched);
    a.mean_pq_distances += static_cast<double>(r.io.pq_distances);
    a.mean_approx_checks += static_cast<double>(r.io.approx_checks);
    a.guarded += r.recall_guarded;
  }
  std::vector<Aggregate> out;
  for (auto& [key, a] : groups) {
    const auto n = static_cast<double>(a.count);
    a.mean_recall /= n;
    a.mean_pages_read /= n;
    a.mean_records_fetched /= n;
    a.mean_pq_distances /= n;
    a.mean_approx_checks /= n;
    out.push_back(a);
  }
  return out;
}

BenchReport run_bench(const SearchEngine& engine, const Dataset& ds, const Workload& w,
                      const std::vector<TruthEntry>& truth, const BenchOptions& opts) {
  if (truth.size() < w.queries.size()) throw ReportError("ground truth is missing entries for some queries");
  BenchReport rep;
  rep.k = opts.params.k;
  rep.L = opts.params.L;
  rep.threads = opts.threads;
  rep.records.resize(w.queries.size());
  rep.decisions.resize(w.queries.size());

  const auto start = std::chrono::steady_clock::now();
  parallel_for(w.queries.size(), opts.threads, [&](std::size_t qi) {
    const auto& q = w.queries[qi];
    const Eigen::VectorXf query = w.vectors.row(q.vector_ref).transpose();
    rep.decisions[qi] = engine.plan(*q.selector, opts.params);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = engine.search(query, *q.selector, opts.params);
    const auto t1 = std::chrono::steady_clock::now();

    auto& rec = rep.records[qi];
    rec.query_id = qi;
    rec.kind = q.kind;
    rec.target = q.target;
    rec.measured = q.measured;
    rec.mechanism = res.mechanism_used;
    rec.L = opts.params.L;
    rec.valid_count = truth[qi].valid_count;
    rec.recall = recall_at_k(res.hits, truth[qi], opts.params.k);
    rec.recall_guarded = truth[qi].valid_count < opts.params.k;
    for (const auto& h : res.hits)
      if (!q.selector->is_member(ds.attrs[h.id])) ++rec.soundness_violations;
    rec.io = res.io;
    rec.explored = res.explored;
    rec.escalations = res.escalations;
    rec.capped = res.capped;
    rec.hits = std::move(res.hits);
    rec.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  });
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rep.qps = rep.wall_seconds > 0 ? static_cast<double>(w.queries.size()) / rep.wall_seconds : 0;

  for (const auto& r : rep.records) rep.soundness_violations += r.soundness_violations;
  rep.aggregates = aggregate_records(rep.records);

  std::map<GroupKey, std::vector<double>> lat;
  for (const auto& r : rep.records) lat[key_of(r)].push_back(r.latency_ms);
  for (const auto& [key, v] : lat) {
    LatencyAggregate a;
    a.kind = static_cast<QueryKind>(std::get<0>(key));
    a.target = std::get<1>(key);
    a.mechanism = static_cast<Mechanism>(std::get<2>(key));
    a.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    a.median_ms = percentile(v, 0.5);
    a.p99_ms = percentile(v, 0.99);
    rep.latency.push_back(a);
  }
  return rep;
}

void write_query_csv(std::ostream& os, const BenchReport& r) {
  os << "query_id,kind,target,measured,mechanism,L,recall,guarded,valid_count,violations,pages_read,"
        "records_fetched,pq_distances,approx_checks,attr_pages_read,explored,escalations,capped,hits\n";
  for (const auto& q : r.records) {
    os << q.query_id << ',' << to_string(q.kind) << ',' << fmt_double(q.target) << ',' << fmt_double(q.measured) << ','
       << to_string(q.mechanism) << ',' << q.L << ',' << fmt_double(q.recall) << ',' << int(q.recall_guarded) << ','
       << q.valid_count << ',' << q.soundness_violations << ',' << q.io.pages_read << ',' << q.io.records_fetched
       << ',' << q.io.pq_distances << ',' << q.io.approx_checks << ',' << q.io.attr_pages_read << ',' << q.explored
       << ',' << q.escalations << ',' << int(q.capped) << ',';
    for (std::size_t i = 0; i < q.hits.size(); ++i) os << (i ? " " : "") << q.hits[i].id;
    os << '\n';
  }
}

void write_report_json(std::ostream& os, const BenchReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["L"] = r.L;
  j["queries"] = r.records.size();
  j["soundness_violations"] = r.soundness_violations;
  double recall = 0, pages = 0;
  for (const auto& q : r.records) {
    recall += q.recall;
    pages += static_cast<double>(q.io.pages_read);
  }
  const double n = std::max<double>(1.0, static_cast<double>(r.records.size()));
  j["mean_recall"] = recall / n;
  j["mean_pages_read"] = pages / n;
  auto& groups = j["aggregates"] = nlohmann::ordered_json::array();
  for (const auto& a : r.aggregates) {
    nlohmann::ordered_json g;
    g["kind"] = to_string(a.kind);
    g["target"] = a.target;
    g["mechanism"] = to_string(a.mechanism);
    g["count"] = a.count;
    g["mean_recall"] = a.mean_recall;
    g["mean_pages_read"] = a.mean_pages_read;
    g["mean_records_fetched"] = a.mean_records_fetched;
    g["mean_pq_distances"] = a.mean_pq_distances;
    g["mean_approx_checks"] = a.mean_approx_checks;
    g["guarded"] = a.guarded;
    groups.push_back(std::move(g));
  }
  os << j.dump(2) << '\n';
}

void write_timing_json(std::ostream& os, const BenchReport& r) {
  nlohmann::ordered_json j;
  j["threads"] = r.threads;
  j["wall_seconds"] = r.wall_seconds;
  j["qps"] = r.qps;
  auto& groups = j["groups"] = nlohmann::ordered_json::array();
  for (const auto& a : r.latency) {
    nlohmann::ordered_json g;
    g["kind"] = to_string(a.kind);
    g["target"] = a.target;
    g["mechanism"] = to_string(a.mechanism);
    g["mean_ms"] = a.mean_ms;
    g["median_ms"] = a.median_ms;
    g["p99_ms"] = a.p99_ms;
    groups.push_back(std::move(g));
  }
  os << j.dump(2) << '\n';
}

void write_decisions_csv(std::ostream& os, const BenchReport& r) {
  write_decision_csv_header(os);
  for (std::size_t i = 0; i < r.decisions.size(); ++i) write_decision_csv_row(os, i, r.decisions[i]);
}

std::vector<QueryRecord> read_query_csv(std::istream& is) {
  std::string line;
  std::getline(is, line);
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"query_id", "kind", "target", "mechanism", "L", "recall", "pages_read"})
    if (!col.count(need)) throw ReportError(std::string("per-query CSV lacks column ") + need);
  std::vector<QueryRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw ReportError("ragged per-query CSV row");
    QueryRecord r;
    r.query_id = parse_number<std::size_t>(f[col["query_id"]], "query id");
    r.kind = parse_query_kind(f[col["kind"]]);
    r.target = parse_number<double>(f[col["target"]], "target");
    r.mechanism = parse_mechanism(f[col["mechanism"]]);
    r.L = parse_number<std::size_t>(f[col["L"]], "L");
    r.recall = parse_number<double>(f[col["recall"]], "recall");
    r.io.pages_read = parse_number<std::uint64_t>(f[col["pages_read"]], "pages_read");
    out.push_back(std::move(r));
  }
  return out;
}

void write_curves_csv(std::ostream& os, const std::vector<QueryRecord>& records) {
  struct Acc {
    std::size_t n = 0;
    double recall = 0, pages = 0;
  };
  std::map<std::tuple<int, double, int, std::size_t>, Acc> groups;
  for (const auto& r : records) {
    auto& a = groups[{static_cast<int>(r.kind), r.target, static_cast<int>(r.mechanism), r.L}];
    ++a.n;
    a.recall += r.recall;
    a.pages += static_cast<double>(r.io.pages_read);
  }
  os << "kind,target,mechanism,L,count,mean_recall,mean_pages_read\n";
  for (const auto& [key, a] : groups) {
    const auto n = static_cast<double>(a.n);
    os << to_string(static_cast<QueryKind>(std::get<0>(key))) << ',' << fmt_double(std::get<1>(key)) << ','
       << to_string(static_cast<Mechanism>(std::get<2>(key))) << ',' << std::get<3>(key) << ',' << a.n << ','
       << fmt_double(a.recall / n) << ',' << fmt_double(a.pages / n) << '\n';
  }
}

}  // namespace spf
