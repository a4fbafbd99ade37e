#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "spfann/graph_index.hpp"
#include "spfann/search_engine.hpp"
#include "spfann/selectors.hpp"
#include "spfann/types.hpp"

namespace spf {

// ---- datasets ----

enum class RangeDist { Uniform, Clustered };

struct DatasetSpec {
  std::uint32_t N = 100'000;
  std::uint32_t dim = 64;
  std::uint32_t n_clusters = 64;
  std::uint32_t label_vocab = 1000;
  double label_zipf_s = 1.0;
  double labels_per_vector_mean = 3.0;
  RangeDist range_dist = RangeDist::Uniform;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  RowMatrixXf vectors;
  std::vector<AttrMap> attrs;
  std::uint32_t vocab_size = 0;
};

// Gaussian mixture vectors (per-dimension spread decays exponentially), Zipf
// labels (1 + Poisson(mean - 1) distinct labels per vector, label 0 most
// frequent), and a range value in [0, 1).
Dataset generate_dataset(const DatasetSpec& spec);

// "<dir>/base.fbin" (u32 n, u32 dim, f32 rows) and "<dir>/attrs.bin".
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_fbin(const RowMatrixXf& m, const std::filesystem::path& path);
RowMatrixXf load_fbin(const std::filesystem::path& path);

// ---- workloads ----

enum class QueryKind { Label, LabelAnd, LabelOr, Range, Hybrid };

std::string_view to_string(QueryKind k);
QueryKind parse_query_kind(std::string_view text);

struct WorkloadGroup {
  QueryKind kind = QueryKind::Label;
  double target = 0.01;
};

// Selectivity targets of the standard benchmark, from 0.05% to 90%.
inline constexpr const char* kDefaultWorkload =
    "Label:0.0005,0.001,0.005,0.01,0.05,0.1;"
    "LabelAnd:0.001,0.01;"
    "LabelOr:0.01,0.1,0.5;"
    "Range:0.001,0.01,0.1,0.3,0.5,0.9;"
    "Hybrid:0.001,0.01,0.1,0.5";

// "Label:0.001,0.01;Range:0.1,0.5" -> one group per (kind, target).
std::vector<WorkloadGroup> parse_workload_groups(std::string_view text);

struct WorkloadSpec {
  std::size_t queries_per_group = 20;
  std::vector<WorkloadGroup> groups;
  std::uint64_t seed = 7;
  double tolerance = 0.3;  // relative
  int max_attempts = 1000;

  void validate() const;
};

struct QuerySpec {
  std::uint32_t vector_ref = 0;  // row in the query vector file
  SelectorPtr selector;
  QueryKind kind = QueryKind::Label;
  double target = 0;
  double measured = 0;  // exact selectivity on the dataset
};

struct Workload {
  RowMatrixXf vectors;
  std::vector<QuerySpec> queries;
};

// Throws GenerationError naming the target when 1000 proposals all miss the
// tolerance band.
Workload generate_queries(const Dataset& ds, const WorkloadSpec& spec);

// "<dir>/queries.fbin" and "<dir>/queries.txt" (one query per line:
// vector_ref expression kind target measured).
void save_workload(const Workload& w, const std::filesystem::path& dir);
Workload load_workload(const std::filesystem::path& dir);

// Exact fraction of `ds` satisfying `sel`.
double measure_selectivity(const Dataset& ds, const Selector& sel);

// ---- ground truth ----

struct TruthEntry {
  std::uint32_t valid_count = 0;
  std::vector<NodeId> ids;  // exact filtered top-k, ascending (distance, id)
};

std::vector<TruthEntry> ground_truth(const Dataset& ds, const Workload& w, std::size_t k, int threads = 1);
void save_truth(const std::vector<TruthEntry>& truth, const std::filesystem::path& path);
std::vector<TruthEntry> load_truth(const std::filesystem::path& path);

// ---- index build ----

struct IndexBuildConfig {
  BuildParams graph;
  int pq_bytes = 16;
  std::uint32_t attr_bytes_max = 512;
};

struct IndexBuildSummary {
  GraphMeta meta;
  double reachable_fraction = 0;
  double pq_mse = 0;
};

// Writes graph.spf, pq_codebook.bin and pq_codes.bin into `index_dir`.
IndexBuildSummary build_index(const Dataset& ds, const IndexBuildConfig& cfg, const std::filesystem::path& index_dir);
// Writes the attribute index files into `index_dir`.
void build_attrs(const Dataset& ds, std::uint64_t seed, const std::filesystem::path& index_dir);

// ---- benchmark ----

struct QueryRecord {
  std::size_t query_id = 0;
  QueryKind kind = QueryKind::Label;
  double target = 0;
  double measured = 0;
  Mechanism mechanism = Mechanism::Auto;
  std::size_t L = 0;
  double recall = 0;
  bool recall_guarded = false;  // valid set smaller than k
  std::uint32_t valid_count = 0;
  std::size_t soundness_violations = 0;
  IoCounters io;
  std::size_t explored = 0;
  std::size_t escalations = 0;
  bool capped = false;
  std::vector<Hit> hits;
  double latency_ms = 0;  // informational, never part of the deterministic report
};

struct Aggregate {
  QueryKind kind = QueryKind::Label;
  double target = 0;
  Mechanism mechanism = Mechanism::Auto;
  std::size_t count = 0;
  double mean_recall = 0;
  double mean_pages_read = 0;
  double mean_records_fetched = 0;
  double mean_pq_distances = 0;
  double mean_approx_checks = 0;
  std::size_t guarded = 0;
};

struct LatencyAggregate {
  QueryKind kind = QueryKind::Label;
  double target = 0;
  Mechanism mechanism = Mechanism::Auto;
  double mean_ms = 0;
  double median_ms = 0;
  double p99_ms = 0;
};

struct BenchOptions {
  SearchParams params;
  int threads = 1;
};

struct BenchReport {
  std::vector<QueryRecord> records;
  std::vector<RouteDecision> decisions;
  std::vector<Aggregate> aggregates;
  std::vector<LatencyAggregate> latency;
  std::size_t soundness_violations = 0;
  std::size_t k = 0;
  std::size_t L = 0;
  int threads = 1;
  double wall_seconds = 0;
  double qps = 0;
};

// `ds` supplies exact attributes for the soundness check of every hit.
BenchReport run_bench(const SearchEngine& engine, const Dataset& ds, const Workload& w,
                      const std::vector<TruthEntry>& truth, const BenchOptions& opts);

double recall_at_k(const std::vector<Hit>& hits, const TruthEntry& truth, std::size_t k);
std::vector<Aggregate> aggregate_records(const std::vector<QueryRecord>& records);

void write_query_csv(std::ostream& os, const BenchReport& r);
void write_report_json(std::ostream& os, const BenchReport& r);  // deterministic
void write_timing_json(std::ostream& os, const BenchReport& r);
void write_decisions_csv(std::ostream& os, const BenchReport& r);

// Reads per-query CSVs (possibly from runs at different L) and writes
// per-(kind, target, mechanism, L) recall and I/O curves.
std::vector<QueryRecord> read_query_csv(std::istream& is);
void write_curves_csv(std::ostream& os, const std::vector<QueryRecord>& records);

}  // namespace spf
