#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spfann/bench.hpp"
#include "spfann/errors.hpp"
#include "spfann/format.hpp"
#include "spfann/search_engine.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  fs::path data_dir = "data";
  fs::path index_dir;  // defaults to <data_dir>/index
  std::uint64_t seed = 42;
  int threads = 1;
  std::size_t k = 10;
  std::size_t L = 100;
  std::string mechanism = "auto";
  double w_io = 10.0;
  double w_cpu = 1.0;

  fs::path index() const { return index_dir.empty() ? data_dir / "index" : index_dir; }

  spf::SearchParams params() const {
    spf::SearchParams p;
    p.k = k;
    p.L = L;
    p.mechanism = spf::parse_mechanism(mechanism);
    p.router = {w_io, w_cpu};
    return p;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw spf::StorageError("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disk-resident filtered vector search: data generation, index build and benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--data-dir", g.data_dir, "Directory holding dataset, queries and truth");
  app.add_option("--index-dir", g.index_dir, "Index directory (default <data-dir>/index)");
  app.add_option("--seed", g.seed, "Seed for generation and build");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--k", g.k, "Results per query")->check(CLI::PositiveNumber);
  app.add_option("--search-L", g.L, "Candidate pool length")->check(CLI::PositiveNumber);
  app.add_option("--mechanism", g.mechanism, "Filtering mechanism")
      ->check(CLI::IsMember({"auto", "pre", "in", "post", "strict-in"}));
  app.add_option("--w-io", g.w_io, "Router weight of estimated page reads");
  app.add_option("--w-cpu", g.w_cpu, "Router weight of estimated compute");

  spf::DatasetSpec ds_spec;
  std::string range_dist = "uniform";
  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_data->add_option("--N", ds_spec.N, "Vector count");
  gen_data->add_option("--dim", ds_spec.dim, "Dimension");
  gen_data->add_option("--clusters", ds_spec.n_clusters, "Gaussian mixture components");
  gen_data->add_option("--vocab", ds_spec.label_vocab, "Label vocabulary size");
  gen_data->add_option("--zipf", ds_spec.label_zipf_s, "Zipf exponent of label frequencies");
  gen_data->add_option("--labels-mean", ds_spec.labels_per_vector_mean, "Mean labels per vector");
  gen_data->add_option("--range-dist", range_dist, "Range values")->check(CLI::IsMember({"uniform", "clustered"}));

  spf::WorkloadSpec wl_spec;
  std::string workload = spf::kDefaultWorkload;
  auto* gen_queries = app.add_subcommand("gen-queries", "Generate a filtered query workload");
  gen_queries->add_option("--per-group", wl_spec.queries_per_group, "Queries per (kind, target) group");
  gen_queries->add_option("--workload", workload, "Groups as Kind:t1,t2;Kind:t3")->capture_default_str();

  spf::IndexBuildConfig build_cfg;
  auto* build_index = app.add_subcommand("build-index", "Build graph and PQ files");
  build_index->add_option("--R", build_cfg.graph.R, "Max direct out-degree");
  build_index->add_option("--R-d", build_cfg.graph.R_d, "Densified degree budget");
  build_index->add_option("--L-build", build_cfg.graph.L_build, "Build pool length");
  build_index->add_option("--alpha", build_cfg.graph.prune_alpha, "Pruning alpha");
  build_index->add_option("--pq-bytes", build_cfg.pq_bytes, "PQ bytes per vector");
  build_index->add_option("--attr-bytes-max", build_cfg.attr_bytes_max, "Attribute bytes reserved per record");

  auto* build_attrs = app.add_subcommand("build-attrs", "Build the attribute indexes");
  auto* ground_truth = app.add_subcommand("ground-truth", "Brute-force filtered top-k");

  std::size_t query_index = 0;
  std::string expr;
  auto* search = app.add_subcommand("search", "Run one query and print the result");
  search->add_option("--query", query_index, "Row of the query vector file");
  search->add_option("--expr", expr, "Selector expression (default: the workload's)");

  fs::path out_dir;
  auto* bench = app.add_subcommand("bench", "Run the workload and write reports");
  bench->add_option("--out-dir", out_dir, "Report directory (default <data-dir>/bench)");

  std::vector<fs::path> inputs;
  fs::path curves_out;
  auto* report = app.add_subcommand("report", "Per-selectivity recall and I/O curves from per-query CSVs");
  report->add_option("inputs", inputs, "Per-query CSV files")->required();
  report->add_option("--out", curves_out, "Curves CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_data) {
      ds_spec.seed = g.seed;
      ds_spec.range_dist = range_dist == "uniform" ? spf::RangeDist::Uniform : spf::RangeDist::Clustered;
      spf::save_dataset(spf::generate_dataset(ds_spec), g.data_dir);
      std::cout << "wrote " << ds_spec.N << " vectors to " << g.data_dir << "\n";
    } else if (*gen_queries) {
      wl_spec.seed = g.seed;
      wl_spec.groups = spf::parse_workload_groups(workload);
      const auto w = spf::generate_queries(spf::load_dataset(g.data_dir), wl_spec);
      spf::save_workload(w, g.data_dir);
      std::cout << "wrote " << w.queries.size() << " queries to " << g.data_dir << "\n";
    } else if (*build_index) {
      build_cfg.graph.seed = g.seed;
      const auto s = spf::build_index(spf::load_dataset(g.data_dir), build_cfg, g.index());
      std::cout << "graph: N=" << s.meta.N << " S_r=" << s.meta.S_r << " S_d=" << s.meta.S_d
                << " entry=" << s.meta.entry_node << " reachable=" << spf::fmt_double(s.reachable_fraction)
                << " pq_mse=" << spf::fmt_double(s.pq_mse) << "\n";
    } else if (*build_attrs) {
      spf::build_attrs(spf::load_dataset(g.data_dir), g.seed, g.index());
      std::cout << "attribute indexes written to " << g.index() << "\n";
    } else if (*ground_truth) {
      const auto truth = spf::ground_truth(spf::load_dataset(g.data_dir), spf::load_workload(g.data_dir), g.k, g.threads);
      spf::save_truth(truth, g.data_dir / "truth.csv");
      std::cout << "wrote truth for " << truth.size() << " queries\n";
    } else if (*search) {
      const auto engine = spf::SearchEngine::open(g.index());
      const auto w = spf::load_workload(g.data_dir);
      if (query_index >= static_cast<std::size_t>(w.vectors.rows())) throw spf::ValidationError("--query out of range");
      spf::SelectorPtr sel;
      if (!expr.empty()) {
        sel = spf::parse_selector(expr);
      } else {
        if (query_index >= w.queries.size()) throw spf::ValidationError("no workload query at that index");
        sel = w.queries[query_index].selector;
      }
      const Eigen::VectorXf q = w.vectors.row(static_cast<Eigen::Index>(query_index)).transpose();
      const auto res = engine.search(q, *sel, g.params());
      nlohmann::ordered_json j;
      j["selector"] = sel->to_string();
      j["mechanism"] = spf::to_string(res.mechanism_used);
      j["pages_read"] = res.io.pages_read;
      j["records_fetched"] = res.io.records_fetched;
      j["pq_distances"] = res.io.pq_distances;
      j["approx_checks"] = res.io.approx_checks;
      j["attr_pages_read"] = res.io.attr_pages_read;
      auto& hits = j["hits"] = nlohmann::ordered_json::array();
      for (const auto& h : res.hits) hits.push_back({{"id", h.id}, {"distance", h.distance}});
      if (res.decision) {
        j["estimate"] = {{"s", res.decision->inputs.s},
                         {"p_pre", res.decision->inputs.p_pre},
                         {"p_in", res.decision->inputs.p_in},
                         {"total_pre", res.decision->pre.total},
                         {"total_in", res.decision->in.total},
                         {"total_post", res.decision->post.total}};
      }
      std::cout << j.dump(2) << "\n";
    } else if (*bench) {
      const auto dir = out_dir.empty() ? g.data_dir / "bench" : out_dir;
      fs::create_directories(dir);
      const auto engine = spf::SearchEngine::open(g.index());
      const auto ds = spf::load_dataset(g.data_dir);
      const auto w = spf::load_workload(g.data_dir);
      const auto truth = spf::load_truth(g.data_dir / "truth.csv");
      const auto rep = spf::run_bench(engine, ds, w, truth, {g.params(), g.threads});
      std::ostringstream per_query, json, timing, decisions;
      spf::write_query_csv(per_query, rep);
      spf::write_report_json(json, rep);
      spf::write_timing_json(timing, rep);
      spf::write_decisions_csv(decisions, rep);
      write_text(dir / "per_query.csv", per_query.str());
      write_text(dir / "report.json", json.str());
      write_text(dir / "timing.json", timing.str());
      write_text(dir / "router_decisions.csv", decisions.str());
      std::cout << json.str();
      if (rep.soundness_violations) return 2;
    } else if (*report) {
      std::vector<spf::QueryRecord> records;
      for (const auto& p : inputs) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw spf::StorageError("cannot open " + p.string());
        auto part = spf::read_query_csv(is);
        records.insert(records.end(), part.begin(), part.end());
      }
      std::ostringstream os;
      spf::write_curves_csv(os, records);
      if (curves_out.empty())
        std::cout << os.str();
      else
        write_text(curves_out, os.str());
    }
  } catch (const spf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
