#pragma once

#include <bitset>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spfann/attr_index.hpp"
#include "spfann/page_store.hpp"
#include "spfann/types.hpp"

namespace spf {

enum class SelectorKind { LabelAnd, LabelOr, Range, And, Or };

inline constexpr double kMinSelectivity = 1e-6;
inline constexpr double kMinPrecision = 1e-2;
inline constexpr std::uint64_t kDefaultIoBudgetPages = 16;

// And-pruning thresholds for batched scans: a branch above kPruneAbove is
// skipped when some kept branch is below kPruneAnchorBelow.
inline constexpr double kPruneAbove = 0.1;
inline constexpr double kPruneAnchorBelow = 0.05;

// Estimated selectivity and the precision of the two superset generators:
// in-filtering's per-vector check and pre-filtering's batched scan.
struct FilterEstimate {
  double selectivity = 1.0;
  double precision_in = 1.0;
  double precision_pre = 1.0;
};

// Which query labels are fetched from disk before traversal ("rare"): labels
// in ascending frequency order while their postings fit the page budget.
struct LabelPlan {
  std::vector<LabelId> rare;  // ascending id
  std::uint64_t pages = 0;
  std::uint64_t budget_pages = 0;

  bool is_rare(LabelId l) const;
};

class PreparedFilter {
 public:
  virtual ~PreparedFilter() = default;
  virtual bool is_member_approx(NodeId v) const = 0;
};

struct PrepareContext {
  const AttributeIndexSet& index;
  const LabelPlan& plan;
  const std::map<LabelId, std::vector<NodeId>>& rare_postings;
};

class Selector;
using SelectorPtr = std::shared_ptr<const Selector>;

// A filter over vector attributes. is_member is exact; everything else may
// over-approximate but never drops a valid vector.
class Selector {
 public:
  virtual ~Selector() = default;

  virtual SelectorKind kind() const = 0;
  virtual bool is_member(const AttrMap& attrs) const = 0;

  // Superset of the valid ids, ascending, from disk-resident indexes.
  virtual std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const = 0;
  // Pages pre_filter_approx reads, computed from in-memory metadata only.
  virtual std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const = 0;

  virtual double selectivity(const AttributeIndexSet& idx) const = 0;
  virtual FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const = 0;

  virtual std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const = 0;
  virtual void collect_labels(std::vector<LabelId>& out) const = 0;
  virtual std::string to_string() const = 0;
};

class LabelAndSelector final : public Selector {
 public:
  explicit LabelAndSelector(std::vector<LabelId> labels);
  SelectorKind kind() const override { return SelectorKind::LabelAnd; }
  bool is_member(const AttrMap& attrs) const override;
  std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const override;
  std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const override;
  double selectivity(const AttributeIndexSet& idx) const override;
  FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const override;
  std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const override;
  void collect_labels(std::vector<LabelId>& out) const override;
  std::string to_string() const override;

  const std::vector<LabelId>& labels() const { return labels_; }
  // Labels the batched scan reads; the rest are left to verification.
  std::vector<LabelId> scanned_labels(const AttributeIndexSet& idx) const;

 private:
  std::vector<LabelId> labels_;
};

class LabelOrSelector final : public Selector {
 public:
  explicit LabelOrSelector(std::vector<LabelId> labels);
  SelectorKind kind() const override { return SelectorKind::LabelOr; }
  bool is_member(const AttrMap& attrs) const override;
  std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const override;
  std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const override;
  double selectivity(const AttributeIndexSet& idx) const override;
  FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const override;
  std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const override;
  void collect_labels(std::vector<LabelId>& out) const override;
  std::string to_string() const override;

  const std::vector<LabelId>& labels() const { return labels_; }

 private:
  std::vector<LabelId> labels_;
};

class RangeSelector final : public Selector {
 public:
  RangeSelector(float lo, float hi);
  SelectorKind kind() const override { return SelectorKind::Range; }
  bool is_member(const AttrMap& attrs) const override;
  std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const override;
  std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const override;
  double selectivity(const AttributeIndexSet& idx) const override;
  FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const override;
  std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const override;
  void collect_labels(std::vector<LabelId>&) const override {}
  std::string to_string() const override;

  float lo() const { return lo_; }
  float hi() const { return hi_; }

 private:
  float lo_;
  float hi_;
};

class AndSelector final : public Selector {
 public:
  explicit AndSelector(std::vector<SelectorPtr> children);
  SelectorKind kind() const override { return SelectorKind::And; }
  bool is_member(const AttrMap& attrs) const override;
  std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const override;
  std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const override;
  double selectivity(const AttributeIndexSet& idx) const override;
  FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const override;
  std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const override;
  void collect_labels(std::vector<LabelId>& out) const override;
  std::string to_string() const override;

  const std::vector<SelectorPtr>& children() const { return children_; }
  // Per child: true when the batched scan skips it.
  std::vector<bool> pruned_children(const AttributeIndexSet& idx) const;

 private:
  std::vector<SelectorPtr> children_;
};

class OrSelector final : public Selector {
 public:
  explicit OrSelector(std::vector<SelectorPtr> children);
  SelectorKind kind() const override { return SelectorKind::Or; }
  bool is_member(const AttrMap& attrs) const override;
  std::vector<NodeId> pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const override;
  std::uint64_t pre_filter_pages(const AttributeIndexSet& idx) const override;
  double selectivity(const AttributeIndexSet& idx) const override;
  FilterEstimate estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const override;
  std::unique_ptr<PreparedFilter> prepare(const PrepareContext& ctx) const override;
  void collect_labels(std::vector<LabelId>& out) const override;
  std::string to_string() const override;

  const std::vector<SelectorPtr>& children() const { return children_; }

 private:
  std::vector<SelectorPtr> children_;
};

SelectorPtr label_and(std::vector<LabelId> labels);
SelectorPtr label_or(std::vector<LabelId> labels);
SelectorPtr range(float lo, float hi);
SelectorPtr all_of(std::vector<SelectorPtr> children);
SelectorPtr any_of(std::vector<SelectorPtr> children);

// expr := labeland(ids) | labelor(ids) | range(l,r) | and(expr,...) | or(expr,...)
SelectorPtr parse_selector(std::string_view text);

LabelPlan plan_rare_labels(const Selector& sel, const AttributeIndexSet& idx,
                           std::uint64_t io_budget_pages);

// Per-query state for in-filtering: rare postings fetched and merged, the
// remaining labels left to the Bloom filters.
class PreparedQuery {
 public:
  bool is_member_approx(NodeId v) const { return root_->is_member_approx(v); }
  const LabelPlan& plan() const { return plan_; }
  std::uint64_t pages_read() const { return pages_read_; }

 private:
  friend PreparedQuery prepare_query(const Selector&, const AttributeIndexSet&, std::uint64_t,
                                     IoCounters&);
  LabelPlan plan_;
  std::uint64_t pages_read_ = 0;
  std::unique_ptr<PreparedFilter> root_;
};

PreparedQuery prepare_query(const Selector& sel, const AttributeIndexSet& idx,
                            std::uint64_t io_budget_pages, IoCounters& ctr);

FilterEstimate estimate_filter(const Selector& sel, const AttributeIndexSet& idx,
                               std::uint64_t io_budget_pages = kDefaultIoBudgetPages);

// Sorted-list helpers shared by the selectors.
std::vector<NodeId> intersect_sorted(std::span<const NodeId> a, std::span<const NodeId> b);
std::vector<NodeId> union_sorted(std::span<const std::vector<NodeId>> lists);

}  // namespace spf
