#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include "spfann/attr_index.hpp"
#include "spfann/graph_index.hpp"
#include "spfann/selectors.hpp"

namespace spf {

inline constexpr double kDefaultGamma = 0.05;

enum class CostMechanism { Pre, InLow, InHigh, Post };
enum class Route { Pre, In, Post };

std::string_view to_string(CostMechanism m);
std::string_view to_string(Route r);

struct CostInputs {
  double N = 0;
  double s = 1;
  double p_pre = 1;
  double p_in = 1;
  double X_pre = 0;
  double X_in = 0;
  double L = 0;
  double R = 0;
  double R_d = 0;
  double S_r = 0;
  double S_d = 0;
  double gamma = kDefaultGamma;
};

struct RouterConfig {
  double w_io = 10.0;
  double w_cpu = 1.0;
};

struct CostEstimate {
  CostMechanism mechanism = CostMechanism::Pre;
  double est_io_pages = 0;
  double est_compute = 0;
  double total = 0;
};

// total is filled from cfg; the other fields follow the per-mechanism formulas.
CostEstimate estimate_pre(const CostInputs& in, const RouterConfig& cfg = {});
CostEstimate estimate_in(const CostInputs& in, const RouterConfig& cfg = {});
CostEstimate estimate_post(const CostInputs& in, const RouterConfig& cfg = {});

// Lowest total wins; ties go to Pre, then In, then Post.
Route choose_route(const CostEstimate& pre, const CostEstimate& in, const CostEstimate& post);

struct RouteDecision {
  Route chosen = Route::Pre;
  CostInputs inputs;
  FilterEstimate filter;
  CostEstimate pre;
  CostEstimate in;
  CostEstimate post;
};

CostInputs make_cost_inputs(const Selector& sel, const AttributeIndexSet& idx, const GraphMeta& meta,
                            std::size_t L, std::uint64_t io_budget_pages = kDefaultIoBudgetPages,
                            double gamma = kDefaultGamma);

RouteDecision route(const Selector& sel, const AttributeIndexSet& idx, const GraphMeta& meta,
                    std::size_t L, const RouterConfig& cfg = {},
                    std::uint64_t io_budget_pages = kDefaultIoBudgetPages);

void write_decision_csv_header(std::ostream& os);
void write_decision_csv_row(std::ostream& os, std::uint64_t query_id, const RouteDecision& d);

}  // namespace spf
