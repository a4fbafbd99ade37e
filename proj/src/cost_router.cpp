#include "spfann/cost_router.hpp"

#include <ostream>

#include "spfann/format.hpp"

namespace spf {

std::string_view to_string(CostMechanism m) {
  switch (m) {
    case CostMechanism::Pre: return "pre";
    case CostMechanism::InLow: return "in_low";
    case CostMechanism::InHigh: return "in_high";
    case CostMechanism::Post: return "post";
  }
  return "?";
}

std::string_view to_string(Route r) {
  switch (r) {
    case Route::Pre: return "pre";
    case Route::In: return "in";
    case Route::Post: return "post";
  }
  return "?";
}

namespace {

CostEstimate finish(CostMechanism m, double io, double compute, const RouterConfig& cfg) {
  return {m, io, compute, cfg.w_io * io + cfg.w_cpu * compute};
}

}  // namespace

CostEstimate estimate_pre(const CostInputs& in, const RouterConfig& cfg) {
  const double io = in.X_pre + (in.L / in.p_pre) * in.S_r;
  const double compute = in.s * in.N / in.p_pre;
  return finish(CostMechanism::Pre, io, compute, cfg);
}

CostEstimate estimate_in(const CostInputs& in, const RouterConfig& cfg) {
  if (in.s * in.R_d / in.p_in <= in.R) {
    // Too few possibly-valid neighbors to fill R slots: the rest are bridges.
    const double explored = (in.L / in.s) * (in.R / in.R_d);
    const double io = in.X_in + explored * in.S_d;
    const double compute = (explored + in.gamma * in.L / in.s) * in.R;
    return finish(CostMechanism::InLow, io, compute, cfg);
  }
  const double explored = in.L / in.p_in;
  const double io = in.X_in + explored * in.S_d;
  const double compute = explored * (in.R + in.gamma * in.R_d);
  return finish(CostMechanism::InHigh, io, compute, cfg);
}

CostEstimate estimate_post(const CostInputs& in, const RouterConfig& cfg) {
  const double explored = in.L / in.s;
  return finish(CostMechanism::Post, explored * in.S_r, explored * in.R, cfg);
}

Route choose_route(const CostEstimate& pre, const CostEstimate& in, const CostEstimate& post) {
  Route best = Route::Pre;
  double best_total = pre.total;
  if (in.total < best_total) {
    best = Route::In;
    best_total = in.total;
  }
  if (post.total < best_total) best = Route::Post;
  return best;
}

CostInputs make_cost_inputs(const Selector& sel, const AttributeIndexSet& idx, const GraphMeta& meta,
                            std::size_t L, std::uint64_t io_budget_pages, double gamma) {
  const auto plan = plan_rare_labels(sel, idx, io_budget_pages);
  const auto est = sel.estimate(idx, plan);
  CostInputs in;
  in.N = meta.N;
  in.s = est.selectivity;
  in.p_pre = est.precision_pre;
  in.p_in = est.precision_in;
  in.X_pre = static_cast<double>(sel.pre_filter_pages(idx));
  in.X_in = static_cast<double>(plan.pages);
  in.L = static_cast<double>(L);
  in.R = meta.R;
  in.R_d = meta.R_d;
  in.S_r = meta.S_r;
  in.S_d = meta.S_d;
  in.gamma = gamma;
  return in;
}

RouteDecision route(const Selector& sel, const AttributeIndexSet& idx, const GraphMeta& meta, std::size_t L,
                    const RouterConfig& cfg, std::uint64_t io_budget_pages) {
  RouteDecision d;
  d.inputs = make_cost_inputs(sel, idx, meta, L, io_budget_pages);
  d.filter = {d.inputs.s, d.inputs.p_in, d.inputs.p_pre};
  d.pre = estimate_pre(d.inputs, cfg);
  d.in = estimate_in(d.inputs, cfg);
  d.post = estimate_post(d.inputs, cfg);
  d.chosen = choose_route(d.pre, d.in, d.post);
  return d;
}

void write_decision_csv_header(std::ostream& os) {
  os << "query_id,s,p_pre,p_in,x_pre,x_in,total_pre,total_in,total_post,in_regime,chosen\n";
}

void write_decision_csv_row(std::ostream& os, std::uint64_t query_id, const RouteDecision& d) {
  os << query_id << ',' << fmt_double(d.inputs.s) << ',' << fmt_double(d.inputs.p_pre) << ','
     << fmt_double(d.inputs.p_in) << ',' << fmt_double(d.inputs.X_pre) << ',' << fmt_double(d.inputs.X_in) << ','
     << fmt_double(d.pre.total) << ',' << fmt_double(d.in.total) << ',' << fmt_double(d.post.total) << ','
     << to_string(d.in.mechanism) << ',' << to_string(d.chosen) << '\n';
}

}  // namespace spf
