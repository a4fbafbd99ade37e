#include "spfann/selectors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>

#include "spfann/errors.hpp"

namespace spf {

namespace {

double clamp_s(double s) { return std::clamp(s, kMinSelectivity, 1.0); }
double clamp_p(double p) {
  if (!std::isfinite(p)) return 1.0;
  return std::clamp(p, kMinPrecision, 1.0);
}

std::vector<LabelId> normalize_labels(std::vector<LabelId> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

bool has_label(const AttrMap& attrs, LabelId l) {
  return std::find(attrs.labels.begin(), attrs.labels.end(), l) != attrs.labels.end();
}

std::string join_labels(const char* name, const std::vector<LabelId>& labels) {
  std::string out = name;
  out += '(';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(labels[i]);
  }
  out += ')';
  return out;
}

std::string float_text(float x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string join_children(const char* name, const std::vector<SelectorPtr>& children) {
  std::string out = name;
  out += '(';
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (i) out += ',';
    out += children[i]->to_string();
  }
  out += ')';
  return out;
}

double bloom_fp(const AttributeIndexSet& idx) {
  return bloom_false_positive_rate(idx.stats().mean_labels_per_vector, VectorBloom::kBits,
                                   idx.bloom().k_hashes());
}

// Labels sorted by ascending (frequency, id).
std::vector<LabelId> by_frequency(std::vector<LabelId> labels, const AttributeIndexSet& idx) {
  std::sort(labels.begin(), labels.end(), [&](LabelId a, LabelId b) {
    auto fa = idx.labels().frequency(a);
    auto fb = idx.labels().frequency(b);
    return fa < fb || (fa == fb && a < b);
  });
  return labels;
}

std::vector<NodeId> all_ids(std::uint32_t n) {
  std::vector<NodeId> ids(n);
  std::iota(ids.begin(), ids.end(), NodeId{0});
  return ids;
}

class PreparedLabelOr final : public PreparedFilter {
 public:
  PreparedLabelOr(std::vector<NodeId> merged, std::vector<LabelId> frequent, const VectorBloom& bloom)
      : merged_(std::move(merged)), frequent_(std::move(frequent)), bloom_(bloom) {}

  bool is_member_approx(NodeId v) const override {
    if (std::binary_search(merged_.begin(), merged_.end(), v)) return true;
    for (LabelId l : frequent_)
      if (bloom_.might_contain(v, l)) return true;
    return false;
  }

 private:
  std::vector<NodeId> merged_;
  std::vector<LabelId> frequent_;
  const VectorBloom& bloom_;
};

class PreparedLabelAnd final : public PreparedFilter {
 public:
  PreparedLabelAnd(bool has_rare, std::vector<NodeId> merged, std::vector<LabelId> frequent,
                   const VectorBloom& bloom)
      : has_rare_(has_rare), merged_(std::move(merged)), frequent_(std::move(frequent)), bloom_(bloom) {}

  bool is_member_approx(NodeId v) const override {
    if (has_rare_ && !std::binary_search(merged_.begin(), merged_.end(), v)) return false;
    for (LabelId l : frequent_)
      if (!bloom_.might_contain(v, l)) return false;
    return true;
  }

 private:
  bool has_rare_;
  std::vector<NodeId> merged_;
  std::vector<LabelId> frequent_;
  const VectorBloom& bloom_;
};

class PreparedRange final : public PreparedFilter {
 public:
  PreparedRange(std::bitset<kRangeBuckets> mask, std::span<const std::uint8_t> codes)
      : mask_(mask), codes_(codes) {}

  bool is_member_approx(NodeId v) const override { return mask_[codes_[v]]; }

 private:
  std::bitset<kRangeBuckets> mask_;
  std::span<const std::uint8_t> codes_;
};

class PreparedBool final : public PreparedFilter {
 public:
  PreparedBool(bool conjunction, std::vector<std::unique_ptr<PreparedFilter>> children)
      : conjunction_(conjunction), children_(std::move(children)) {}

  bool is_member_approx(NodeId v) const override {
    if (conjunction_) {
      for (const auto& c : children_)
        if (!c->is_member_approx(v)) return false;
      return true;
    }
    for (const auto& c : children_)
      if (c->is_member_approx(v)) return true;
    return false;
  }

 private:
  bool conjunction_;
  std::vector<std::unique_ptr<PreparedFilter>> children_;
};

}  // namespace

std::vector<NodeId> intersect_sorted(std::span<const NodeId> a, std::span<const NodeId> b) {
  std::vector<NodeId> out;
  out.reserve(std::min(a.size(), b.size()));
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<NodeId> union_sorted(std::span<const std::vector<NodeId>> lists) {
  std::vector<NodeId> out;
  for (const auto& l : lists) {
    std::vector<NodeId> merged;
    merged.reserve(out.size() + l.size());
    std::set_union(out.begin(), out.end(), l.begin(), l.end(), std::back_inserter(merged));
    out.swap(merged);
  }
  return out;
}

bool LabelPlan::is_rare(LabelId l) const { return std::binary_search(rare.begin(), rare.end(), l); }

// ---- LabelAnd ----

LabelAndSelector::LabelAndSelector(std::vector<LabelId> labels) : labels_(normalize_labels(std::move(labels))) {}

bool LabelAndSelector::is_member(const AttrMap& attrs) const {
  return std::all_of(labels_.begin(), labels_.end(), [&](LabelId l) { return has_label(attrs, l); });
}

std::vector<LabelId> LabelAndSelector::scanned_labels(const AttributeIndexSet& idx) const {
  auto order = by_frequency(labels_, idx);
  if (order.empty()) return order;
  const auto& st = idx.stats();
  const bool anchored = st.selectivity(order.front()) < kPruneAnchorBelow;
  std::vector<LabelId> kept;
  for (LabelId l : order)
    if (!(anchored && st.selectivity(l) > kPruneAbove)) kept.push_back(l);
  return kept;
}

std::vector<NodeId> LabelAndSelector::pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const {
  auto scanned = scanned_labels(idx);
  if (scanned.empty()) return all_ids(idx.size());
  auto out = idx.labels().lookup_postings(scanned.front(), ctr);
  for (std::size_t i = 1; i < scanned.size(); ++i) {
    auto next = idx.labels().lookup_postings(scanned[i], ctr);
    out = intersect_sorted(out, next);
  }
  return out;
}

std::uint64_t LabelAndSelector::pre_filter_pages(const AttributeIndexSet& idx) const {
  std::uint64_t pages = 0;
  for (LabelId l : scanned_labels(idx)) pages += idx.labels().posting_pages(l);
  return pages;
}

double LabelAndSelector::selectivity(const AttributeIndexSet& idx) const {
  double s = 1.0;
  for (LabelId l : labels_) s *= idx.stats().selectivity(l);
  return s;
}

FilterEstimate LabelAndSelector::estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const {
  const auto& st = idx.stats();
  const double f = bloom_fp(idx);
  const double s = selectivity(idx);
  double pass = 1.0;
  for (LabelId l : labels_) {
    const double sl = st.selectivity(l);
    pass *= plan.is_rare(l) ? sl : sl + (1.0 - sl) * f;
  }
  double scanned_mass = 1.0;
  for (LabelId l : scanned_labels(idx)) scanned_mass *= st.selectivity(l);
  FilterEstimate e;
  e.selectivity = clamp_s(s);
  e.precision_in = clamp_p(pass > 0 ? s / pass : 1.0);
  e.precision_pre = clamp_p(scanned_mass > 0 ? s / scanned_mass : 1.0);
  return e;
}

std::unique_ptr<PreparedFilter> LabelAndSelector::prepare(const PrepareContext& ctx) const {
  bool has_rare = false;
  std::vector<NodeId> merged;
  std::vector<LabelId> frequent;
  for (LabelId l : by_frequency(labels_, ctx.index)) {
    if (!ctx.plan.is_rare(l)) {
      frequent.push_back(l);
      continue;
    }
    const auto& postings = ctx.rare_postings.at(l);
    merged = has_rare ? intersect_sorted(merged, postings) : postings;
    has_rare = true;
  }
  return std::make_unique<PreparedLabelAnd>(has_rare, std::move(merged), std::move(frequent),
                                            ctx.index.bloom());
}

void LabelAndSelector::collect_labels(std::vector<LabelId>& out) const {
  out.insert(out.end(), labels_.begin(), labels_.end());
}

std::string LabelAndSelector::to_string() const { return join_labels("labeland", labels_); }

// ---- LabelOr ----

LabelOrSelector::LabelOrSelector(std::vector<LabelId> labels) : labels_(normalize_labels(std::move(labels))) {}

bool LabelOrSelector::is_member(const AttrMap& attrs) const {
  return std::any_of(labels_.begin(), labels_.end(), [&](LabelId l) { return has_label(attrs, l); });
}

std::vector<NodeId> LabelOrSelector::pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const {
  std::vector<std::vector<NodeId>> lists;
  for (LabelId l : labels_) lists.push_back(idx.labels().lookup_postings(l, ctr));
  return union_sorted(lists);
}

std::uint64_t LabelOrSelector::pre_filter_pages(const AttributeIndexSet& idx) const {
  std::uint64_t pages = 0;
  for (LabelId l : labels_) pages += idx.labels().posting_pages(l);
  return pages;
}

double LabelOrSelector::selectivity(const AttributeIndexSet& idx) const {
  double miss = 1.0;
  for (LabelId l : labels_) miss *= 1.0 - idx.stats().selectivity(l);
  return 1.0 - miss;
}

FilterEstimate LabelOrSelector::estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const {
  const double f = bloom_fp(idx);
  const double s = selectivity(idx);
  int frequent = 0;
  for (LabelId l : labels_)
    if (!plan.is_rare(l)) ++frequent;
  const double f_or = 1.0 - std::pow(1.0 - f, frequent);
  const double approx = s + (1.0 - s) * f_or;
  FilterEstimate e;
  e.selectivity = clamp_s(s);
  e.precision_in = clamp_p(approx > 0 ? s / approx : 1.0);
  e.precision_pre = 1.0;
  return e;
}

std::unique_ptr<PreparedFilter> LabelOrSelector::prepare(const PrepareContext& ctx) const {
  std::vector<std::vector<NodeId>> lists;
  std::vector<LabelId> frequent;
  for (LabelId l : labels_) {
    if (ctx.plan.is_rare(l))
      lists.push_back(ctx.rare_postings.at(l));
    else
      frequent.push_back(l);
  }
  return std::make_unique<PreparedLabelOr>(union_sorted(lists), std::move(frequent), ctx.index.bloom());
}

void LabelOrSelector::collect_labels(std::vector<LabelId>& out) const {
  out.insert(out.end(), labels_.begin(), labels_.end());
}

std::string LabelOrSelector::to_string() const { return join_labels("labelor", labels_); }

// ---- Range ----

RangeSelector::RangeSelector(float lo, float hi) : lo_(lo), hi_(hi) {
  if (!(lo <= hi)) throw ValidationError("range selector needs l <= r");
}

bool RangeSelector::is_member(const AttrMap& attrs) const { return lo_ <= attrs.value && attrs.value < hi_; }

std::vector<NodeId> RangeSelector::pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const {
  return idx.range().scan_range(lo_, hi_, ctr);
}

std::uint64_t RangeSelector::pre_filter_pages(const AttributeIndexSet& idx) const {
  return idx.range().scan_pages(lo_, hi_);
}

double RangeSelector::selectivity(const AttributeIndexSet& idx) const {
  return idx.range().selectivity_from_quantiles(lo_, hi_);
}

FilterEstimate RangeSelector::estimate(const AttributeIndexSet& idx, const LabelPlan&) const {
  const double s = selectivity(idx);
  const double bucket = idx.range().bucket_fraction(lo_, hi_);
  FilterEstimate e;
  e.selectivity = clamp_s(s);
  e.precision_in = clamp_p(bucket > 0 ? s / bucket : 1.0);
  e.precision_pre = 1.0;
  return e;
}

std::unique_ptr<PreparedFilter> RangeSelector::prepare(const PrepareContext& ctx) const {
  return std::make_unique<PreparedRange>(ctx.index.range().overlapping_buckets(lo_, hi_),
                                         ctx.index.range().codes());
}

std::string RangeSelector::to_string() const {
  return "range(" + float_text(lo_) + "," + float_text(hi_) + ")";
}

// ---- And ----

AndSelector::AndSelector(std::vector<SelectorPtr> children) : children_(std::move(children)) {}

bool AndSelector::is_member(const AttrMap& attrs) const {
  return std::all_of(children_.begin(), children_.end(), [&](const SelectorPtr& c) { return c->is_member(attrs); });
}

std::vector<bool> AndSelector::pruned_children(const AttributeIndexSet& idx) const {
  std::vector<double> s;
  for (const auto& c : children_) s.push_back(c->selectivity(idx));
  const bool anchored = !s.empty() && *std::min_element(s.begin(), s.end()) < kPruneAnchorBelow;
  std::vector<bool> pruned(children_.size(), false);
  for (std::size_t i = 0; i < s.size(); ++i) pruned[i] = anchored && s[i] > kPruneAbove;
  return pruned;
}

std::vector<NodeId> AndSelector::pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const {
  auto pruned = pruned_children(idx);
  bool first = true;
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < children_.size(); ++i) {
    if (pruned[i]) continue;
    auto list = children_[i]->pre_filter_approx(idx, ctr);
    out = first ? std::move(list) : intersect_sorted(out, list);
    first = false;
  }
  return first ? all_ids(idx.size()) : out;
}

std::uint64_t AndSelector::pre_filter_pages(const AttributeIndexSet& idx) const {
  auto pruned = pruned_children(idx);
  std::uint64_t pages = 0;
  for (std::size_t i = 0; i < children_.size(); ++i)
    if (!pruned[i]) pages += children_[i]->pre_filter_pages(idx);
  return pages;
}

double AndSelector::selectivity(const AttributeIndexSet& idx) const {
  double s = 1.0;
  for (const auto& c : children_) s *= c->selectivity(idx);
  return s;
}

FilterEstimate AndSelector::estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const {
  auto pruned = pruned_children(idx);
  double s = 1.0, p_in = 1.0, p_pre = 1.0;
  for (std::size_t i = 0; i < children_.size(); ++i) {
    auto e = children_[i]->estimate(idx, plan);
    s *= children_[i]->selectivity(idx);
    p_in *= e.precision_in;
    p_pre *= pruned[i] ? e.selectivity : e.precision_pre;
  }
  return {clamp_s(s), clamp_p(p_in), clamp_p(p_pre)};
}

std::unique_ptr<PreparedFilter> AndSelector::prepare(const PrepareContext& ctx) const {
  std::vector<std::unique_ptr<PreparedFilter>> parts;
  for (const auto& c : children_) parts.push_back(c->prepare(ctx));
  return std::make_unique<PreparedBool>(true, std::move(parts));
}

void AndSelector::collect_labels(std::vector<LabelId>& out) const {
  for (const auto& c : children_) c->collect_labels(out);
}

std::string AndSelector::to_string() const { return join_children("and", children_); }

// ---- Or ----

OrSelector::OrSelector(std::vector<SelectorPtr> children) : children_(std::move(children)) {}

bool OrSelector::is_member(const AttrMap& attrs) const {
  return std::any_of(children_.begin(), children_.end(), [&](const SelectorPtr& c) { return c->is_member(attrs); });
}

std::vector<NodeId> OrSelector::pre_filter_approx(const AttributeIndexSet& idx, IoCounters& ctr) const {
  std::vector<std::vector<NodeId>> lists;
  for (const auto& c : children_) lists.push_back(c->pre_filter_approx(idx, ctr));
  return union_sorted(lists);
}

std::uint64_t OrSelector::pre_filter_pages(const AttributeIndexSet& idx) const {
  std::uint64_t pages = 0;
  for (const auto& c : children_) pages += c->pre_filter_pages(idx);
  return pages;
}

double OrSelector::selectivity(const AttributeIndexSet& idx) const {
  double miss = 1.0;
  for (const auto& c : children_) miss *= 1.0 - c->selectivity(idx);
  return 1.0 - miss;
}

FilterEstimate OrSelector::estimate(const AttributeIndexSet& idx, const LabelPlan& plan) const {
  double miss_true = 1.0, miss_in = 1.0, miss_pre = 1.0;
  for (const auto& c : children_) {
    auto e = c->estimate(idx, plan);
    const double s = c->selectivity(idx);
    miss_true *= 1.0 - s;
    miss_in *= 1.0 - std::min(1.0, s / e.precision_in);
    miss_pre *= 1.0 - std::min(1.0, s / e.precision_pre);
  }
  const double s = 1.0 - miss_true;
  const double a_in = 1.0 - miss_in;
  const double a_pre = 1.0 - miss_pre;
  return {clamp_s(s), clamp_p(a_in > 0 ? s / a_in : 1.0), clamp_p(a_pre > 0 ? s / a_pre : 1.0)};
}

std::unique_ptr<PreparedFilter> OrSelector::prepare(const PrepareContext& ctx) const {
  std::vector<std::unique_ptr<PreparedFilter>> parts;
  for (const auto& c : children_) parts.push_back(c->prepare(ctx));
  return std::make_unique<PreparedBool>(false, std::move(parts));
}

void OrSelector::collect_labels(std::vector<LabelId>& out) const {
  for (const auto& c : children_) c->collect_labels(out);
}

std::string OrSelector::to_string() const { return join_children("or", children_); }

// ---- factories ----

SelectorPtr label_and(std::vector<LabelId> labels) { return std::make_shared<LabelAndSelector>(std::move(labels)); }
SelectorPtr label_or(std::vector<LabelId> labels) { return std::make_shared<LabelOrSelector>(std::move(labels)); }
SelectorPtr range(float lo, float hi) { return std::make_shared<RangeSelector>(lo, hi); }
SelectorPtr all_of(std::vector<SelectorPtr> children) { return std::make_shared<AndSelector>(std::move(children)); }
SelectorPtr any_of(std::vector<SelectorPtr> children) { return std::make_shared<OrSelector>(std::move(children)); }

// ---- parser ----

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  SelectorPtr parse() {
    auto sel = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing input");
    return sel;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("selector: " + what + " at offset " + std::to_string(pos_) + " in '" +
                     std::string(text_) + "'");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string_view word() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  std::string_view number_token() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
    if (start == pos_) fail("expected a number");
    return text_.substr(start, pos_ - start);
  }

  LabelId label() {
    auto tok = number_token();
    LabelId v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) fail("bad label id '" + std::string(tok) + "'");
    return v;
  }

  float real() {
    auto tok = number_token();
    float v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) fail("bad number '" + std::string(tok) + "'");
    return v;
  }

  std::vector<LabelId> label_list() {
    std::vector<LabelId> out;
    expect('(');
    if (peek(')')) {
      ++pos_;
      return out;
    }
    out.push_back(label());
    while (peek(',')) {
      ++pos_;
      out.push_back(label());
    }
    expect(')');
    return out;
  }

  std::vector<SelectorPtr> child_list() {
    std::vector<SelectorPtr> out;
    expect('(');
    out.push_back(expr());
    while (peek(',')) {
      ++pos_;
      out.push_back(expr());
    }
    expect(')');
    return out;
  }

  SelectorPtr expr() {
    auto name = word();
    if (name == "labeland") return label_and(label_list());
    if (name == "labelor") return label_or(label_list());
    if (name == "range") {
      expect('(');
      float l = real();
      expect(',');
      float r = real();
      expect(')');
      if (!(l <= r)) fail("range with l > r");
      return range(l, r);
    }
    if (name == "and") return all_of(child_list());
    if (name == "or") return any_of(child_list());
    fail(name.empty() ? "expected an expression" : "unknown selector '" + std::string(name) + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

SelectorPtr parse_selector(std::string_view text) { return Parser(text).parse(); }

// ---- query preparation ----

LabelPlan plan_rare_labels(const Selector& sel, const AttributeIndexSet& idx, std::uint64_t io_budget_pages) {
  std::vector<LabelId> labels;
  sel.collect_labels(labels);
  labels = by_frequency(normalize_labels(std::move(labels)), idx);
  LabelPlan plan;
  plan.budget_pages = io_budget_pages;
  for (LabelId l : labels) {
    const auto pages = idx.labels().posting_pages(l);
    if (plan.pages + pages > io_budget_pages) break;
    plan.pages += pages;
    plan.rare.push_back(l);
  }
  std::sort(plan.rare.begin(), plan.rare.end());
  return plan;
}

PreparedQuery prepare_query(const Selector& sel, const AttributeIndexSet& idx, std::uint64_t io_budget_pages,
                            IoCounters& ctr) {
  PreparedQuery q;
  q.plan_ = plan_rare_labels(sel, idx, io_budget_pages);
  std::map<LabelId, std::vector<NodeId>> postings;
  IoCounters local;
  for (LabelId l : q.plan_.rare) postings.emplace(l, idx.labels().lookup_postings(l, local));
  q.pages_read_ = local.pages_read;
  ctr += local;
  q.root_ = sel.prepare(PrepareContext{idx, q.plan_, postings});
  return q;
}

FilterEstimate estimate_filter(const Selector& sel, const AttributeIndexSet& idx, std::uint64_t io_budget_pages) {
  return sel.estimate(idx, plan_rare_labels(sel, idx, io_budget_pages));
}

}  // namespace spf
