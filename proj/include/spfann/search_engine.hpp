#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "spfann/attr_index.hpp"
#include "spfann/cost_router.hpp"
#include "spfann/graph_index.hpp"
#include "spfann/page_store.hpp"
#include "spfann/quantizer.hpp"
#include "spfann/selectors.hpp"

namespace spf {

enum class Mechanism { Auto, Pre, In, Post, StrictIn };

std::string_view to_string(Mechanism m);
// Accepts auto, pre, in, post, strict-in.
Mechanism parse_mechanism(std::string_view text);

// Exploration cap for in-filtering is min(ceil(L / kSelectivityFloor),
// max(10 L / s_est, kMinFetchCap)) record fetches.
inline constexpr double kSelectivityFloor = 1e-4;
inline constexpr std::size_t kMinFetchCap = 10'000;

struct SearchParams {
  std::size_t k = 10;
  std::size_t L = 100;
  std::size_t L_max = 0;  // 0 means 16 * L
  Mechanism mechanism = Mechanism::Auto;
  RouterConfig router;
  std::uint64_t io_budget_pages = kDefaultIoBudgetPages;
  // In-filtering pads short neighbor lists with invalid direct neighbors.
  bool bridge_padding = true;

  std::size_t effective_L_max() const { return L_max ? L_max : 16 * L; }
};

struct Hit {
  NodeId id = 0;
  float distance = 0.0f;

  friend bool operator<(const Hit& a, const Hit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  }
  friend bool operator==(const Hit&, const Hit&) = default;
};

struct SearchResult {
  std::vector<Hit> hits;  // ascending (distance, id), all verified valid
  Mechanism mechanism_used = Mechanism::Auto;
  IoCounters io;
  std::size_t explored = 0;
  std::size_t escalations = 0;
  bool capped = false;
  std::optional<RouteDecision> decision;
};

namespace index_files {
inline constexpr const char* kGraph = "graph.spf";
inline constexpr const char* kCodebook = "pq_codebook.bin";
inline constexpr const char* kCodes = "pq_codes.bin";
}  // namespace index_files

// Read-only query executor over one graph, its PQ codes and the attribute
// indexes. All methods are const and safe to call concurrently.
class SearchEngine {
 public:
  SearchEngine(GraphIndex graph, PqCodebook codebook, PqCodes codes, AttributeIndexSet attrs);
  static SearchEngine open(const std::filesystem::path& index_dir);

  SearchResult search(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                      const SearchParams& params) const;

  SearchResult search_pre(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                          const SearchParams& params) const;
  SearchResult search_in(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                         const SearchParams& params) const;
  SearchResult search_post(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                           const SearchParams& params) const;
  // Reference strict in-filtering: neighbor validity comes from reading each
  // neighbor's attributes off disk. No bridges.
  SearchResult search_in_strict_baseline(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                         const SearchParams& params) const;

  RouteDecision plan(const Selector& sel, const SearchParams& params) const;

  const GraphMeta& meta() const { return graph_.meta(); }
  const GraphIndex& graph() const { return graph_; }
  const PqCodebook& codebook() const { return codebook_; }
  const PqCodes& codes() const { return codes_; }
  const AttributeIndexSet& attrs() const { return attrs_; }

 private:
  void check_query(const Eigen::Ref<const Eigen::VectorXf>& query, const SearchParams& params) const;
  SearchResult traverse_filtered(const Eigen::Ref<const Eigen::VectorXf>& query, const Selector& sel,
                                 const SearchParams& params, bool strict) const;

  GraphIndex graph_;
  PqCodebook codebook_;
  PqCodes codes_;
  AttributeIndexSet attrs_;
};

}  // namespace spf
