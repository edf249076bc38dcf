#include "tensormorph/engine.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "tensormorph/error.hpp"

namespace tmorph {

std::string_view strategy_name(RemapStrategy s) {
  return s == RemapStrategy::fused ? "fused" : "materialized";
}

std::string_view edge_mode_name(EdgeMode m) {
  switch (m) {
    case EdgeMode::none: return "none";
    case EdgeMode::sequenced: return "sequenced";
    case EdgeMode::unsequenced: return "unsequenced";
  }
  return "?";
}

std::string_view counter_mode_name(CounterMode m) {
  return m == CounterMode::scalar_reuse ? "scalar_reuse" : "keyed_table";
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

PhaseStats& PhaseTrace::phase(std::string_view name) {
  for (auto& p : phases) {
    if (p.name == name) return p;
  }
  phases.push_back({std::string(name)});
  return phases.back();
}

const PhaseStats* PhaseTrace::find(std::string_view name) const {
  for (const auto& p : phases) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::uint64_t PhaseTrace::total_visits() const {
  std::uint64_t n = 0;
  for (const auto& p : phases) n += p.visits;
  return n;
}

std::uint64_t PhaseTrace::total_passes() const {
  std::uint64_t n = 0;
  for (const auto& p : phases) n += p.passes;
  return n;
}

PhaseTrace& PhaseTrace::operator+=(const PhaseTrace& o) {
  for (const auto& p : o.phases) {
    auto& mine = phase(p.name);
    mine.passes += p.passes;
    mine.visits += p.visits;
    mine.bytes += p.bytes;
  }
  return *this;
}

std::string PhaseTrace::to_string() const {
  std::ostringstream out;
  for (const auto& p : phases) {
    out << p.name << ": passes=" << p.passes << " visits=" << p.visits << " bytes=" << p.bytes
        << "\n";
  }
  out << "total: passes=" << total_passes() << " visits=" << total_visits() << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

namespace {

std::vector<int> canonical_of_levels(const FormatDef& def) {
  std::vector<int> canon(def.levels.size(), -1);
  for (std::size_t d = 0; d < def.projection.size(); ++d) {
    canon[static_cast<std::size_t>(def.projection[d])] = static_cast<int>(d);
  }
  return canon;
}

LevelProperties declared_props(const FormatDef& def, std::size_t l) {
  LevelParams p;
  p.unique = def.levels[l].unique;
  p.ordered = def.levels[l].ordered;
  std::optional<LevelKind> next;
  if (l + 1 < def.levels.size()) next = def.levels[l + 1].kind;
  return level_properties(def.levels[l].kind, p, next);
}

bool needs_edges(LevelKind k) { return k == LevelKind::compressed || k == LevelKind::banded; }
bool stores_coords(LevelKind k) { return k == LevelKind::compressed || k == LevelKind::singleton; }

/// Identity program over the remapped dimensions, used once coordinates are
/// materialized.
RemapProgram identity_over(const RemapProgram& remap) {
  std::vector<std::string> vars;
  std::vector<ExprPtr> exprs;
  const auto& names = remap.dim_names();
  for (std::size_t d = 0; d < remap.dst_arity(); ++d) {
    std::string v = names[d];
    const bool clash = v.empty() || std::count(names.begin(), names.end(), v) > 1;
    if (clash) v = "d" + std::to_string(d);
    while (std::find(vars.begin(), vars.end(), v) != vars.end()) v += "_";
    vars.push_back(v);
    exprs.push_back(make_var(v));
  }
  std::string text = "(";
  for (std::size_t d = 0; d < vars.size(); ++d) text += (d ? "," : "") + vars[d];
  text += ") -> " + text.substr(0) + ")";
  return RemapProgram(text, vars, exprs, {}, {});
}

ConversionPlan plan_direct(const std::string& src_name, const SourceProfile& profile,
                           std::shared_ptr<const FormatDef> dst, std::span<const Index> dims,
                           const PlanOptions& opts) {
  if (dims.size() != dst->order()) {
    throw Error(Errc::OrderMismatch, "tensor of order " + std::to_string(dims.size()) +
                                         " cannot be stored as " + dst->name + " (order " +
                                         std::to_string(dst->order()) + ")");
  }
  if (!profile.iterable) throw Error(Errc::PlanInfeasible, src_name + " source cannot be iterated");

  ConversionPlan plan;
  plan.source = src_name;
  plan.target = dst->name;
  plan.dims.assign(dims.begin(), dims.end());
  plan.source_profile = profile;
  plan.target_format = bind_format(dst, opts.params);
  const BoundFormat& tf = plan.target_format;
  const RemapProgram& remap = tf.remap;
  plan.remapped_bounds = remapped_bounds(remap, dims);

  // counters: scalar when the source visits the key in grouped order
  std::vector<std::string> grouped;
  for (int cv : profile.grouped_prefix()) grouped.push_back(remap.src_vars()[static_cast<std::size_t>(cv)]);
  bool keyed = false;
  for (const auto& c : remap.counters()) {
    plan.counter_modes.push_back(choose_counter_mode(c, grouped));
    keyed = keyed || plan.counter_modes.back() == CounterMode::keyed_table;
  }
  plan.strategy = keyed || remap.expensive() ? RemapStrategy::materialized : RemapStrategy::fused;

  std::vector<DimBounds> src_bounds;
  for (Index d : dims) src_bounds.push_back({0, d - 1});
  const RemapProgram ident = identity_over(remap);
  SourceProfile buffer_profile;
  buffer_profile.unique_coords = profile.unique_coords;
  for (std::size_t l = 0; l < tf.queries.size(); ++l) {
    if (!tf.queries[l]) continue;
    LevelAnalysis a;
    a.level = l;
    a.query = *tf.queries[l];
    if (plan.strategy == RemapStrategy::fused) {
      a.canonical = lower_to_canonical(a.query, remap, src_bounds);
      a.optimized = optimize(a.canonical, profile);
    } else {
      a.canonical = lower_to_canonical(a.query, ident, plan.remapped_bounds, remap.dim_names());
      a.optimized = optimize(a.canonical, buffer_profile);
    }
    plan.analysis.push_back(std::move(a));
  }

  const auto& levels = dst->levels;
  const std::size_t n = levels.size();
  for (std::size_t l = 0; l < n; ++l) {
    if (l == 0 || needs_edges(levels[l].kind)) {
      AssemblyGroup g;
      g.first = g.last = l;
      if (needs_edges(levels[l].kind)) {
        g.edges = l == 0 || declared_props(*dst, l - 1).ordered ? EdgeMode::sequenced
                                                                 : EdgeMode::unsequenced;
      }
      plan.groups.push_back(g);
    }
    plan.groups.back().last = l;
  }
  for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
    AssemblyGroup& g = plan.groups[gi];
    for (std::size_t l = g.first; l <= g.last; ++l) {
      if (stores_coords(levels[l].kind)) g.pass = true;
      if (levels[l].kind != LevelKind::compressed) continue;
      bool dedup = !profile.unique_coords;
      if (levels[l].unique) {
        // a level prefix missing some canonical dimension can repeat
        for (int p : dst->projection) dedup = dedup || static_cast<std::size_t>(p) > l;
      }
      if (dedup) g.dedup_levels.push_back(l);
    }
    if (gi + 1 == plan.groups.size()) g.pass = true;
    if (g.pass && g.first > 0) {
      for (std::size_t l = 0; l < g.first; ++l) {
        const auto props = declared_props(*dst, l);
        if (!props.has_locate || !props.unique) {
          throw Error(Errc::PlanInfeasible,
                      dst->name + " level " + std::to_string(l) +
                          " cannot locate parents for a later assembly group");
        }
      }
    }
  }
  return plan;
}

}  // namespace

SourceProfile declared_profile(const FormatDef& def) {
  SourceProfile p;
  const auto canon = canonical_of_levels(def);
  for (std::size_t l = 0; l < def.levels.size(); ++l) {
    p.levels.push_back({def.levels[l].kind, declared_props(def, l), canon[l]});
  }
  return p;
}

namespace {

ConversionPlan plan_any(const std::string& src_name, const SourceProfile& profile,
                        std::shared_ptr<const FormatDef> dst, std::span<const Index> dims,
                        const PlanOptions& opts) {
  try {
    return plan_direct(src_name, profile, dst, dims, opts);
  } catch (const Error& e) {
    if (e.code() != Errc::PlanInfeasible || !opts.allow_composite || src_name == "coo" ||
        dst->name == "coo") {
      throw;
    }
  }
  ConversionPlan plan;
  plan.source = src_name;
  plan.target = dst->name;
  plan.dims.assign(dims.begin(), dims.end());
  plan.composite = true;
  auto coo = FormatRegistry::global().get("coo");
  PlanOptions inner = opts;
  inner.allow_composite = false;
  inner.params.clear();
  plan.stages.push_back(plan_direct(src_name, profile, coo, dims, inner));
  inner.params = opts.params;
  inner.profile.reset();
  plan.stages.push_back(plan_direct("coo", declared_profile(*coo), dst, dims, inner));
  return plan;
}

}  // namespace

ConversionPlan plan_conversion(const FormatDef& src, std::shared_ptr<const FormatDef> dst,
                               std::span<const Index> dims, const PlanOptions& opts) {
  if (dims.size() != src.order()) {
    throw Error(Errc::OrderMismatch, src.name + " stores order-" + std::to_string(src.order()) +
                                         " tensors, got " + std::to_string(dims.size()) + " dims");
  }
  const SourceProfile profile = opts.profile ? *opts.profile : declared_profile(src);
  return plan_any(src.name, profile, std::move(dst), dims, opts);
}

ConversionPlan plan_for(const TensorStorage& src, std::shared_ptr<const FormatDef> dst,
                        const PlanOptions& opts) {
  const SourceProfile profile = opts.profile ? *opts.profile : profile_of(src);
  return plan_any(src.format, profile, std::move(dst), src.dims, opts);
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<Index, Index>& k) const noexcept {
    return static_cast<std::size_t>(k.first) * 0x9e3779b97f4a7c15ULL ^
           static_cast<std::size_t>(k.second);
  }
};

struct CoordHash {
  std::size_t operator()(const Coord& k) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (Index v : k) h = (h ^ static_cast<std::size_t>(v)) * 0x100000001b3ULL;
    return h;
  }
};

class Executor {
 public:
  Executor(const ConversionPlan& plan, const TensorStorage& src, ProtocolLog* log)
      : plan_(plan), src_(src), log_(log), remap_(plan.target_format.remap) {}

  Conversion run() {
    check_source();
    counter_extents();
    if (plan_.strategy == RemapStrategy::materialized) materialize();
    analyze();
    assemble();
    return {std::move(out_), std::move(trace_)};
  }

 private:
  void check_source() {
    if (src_.dims != plan_.dims) throw Error(Errc::DimMismatch, "tensor dims differ from the plan");
    validate_storage(src_);
    const SourceProfile actual = profile_of(src_);
    const auto& declared = plan_.source_profile.levels;
    for (std::size_t l = 0; l < declared.size() && l < actual.levels.size(); ++l) {
      if (declared[l].props.stores_only_nonzeros && !actual.levels[l].props.stores_only_nonzeros) {
        throw Error(Errc::PlanInfeasible, "plan assumed a source without stored zeros");
      }
    }
    if (plan_.source_profile.unique_coords && !src_.unique_coords) {
      throw Error(Errc::PlanInfeasible, "plan assumed a source without duplicate coordinates");
    }
  }

  void counter_extents() {
    std::map<std::string, DimBounds> vars;
    for (std::size_t s = 0; s < remap_.src_arity(); ++s) {
      vars[remap_.src_vars()[s]] = {0, plan_.dims[s] - 1};
    }
    for (const auto& c : remap_.counters()) {
      try {
        std::vector<DimBounds> b;
        for (const auto& k : c.key_exprs) b.push_back(expr_bounds(*k, remap_, vars, plan_.dims));
        extents_.push_back(std::move(b));
      } catch (const Error&) {
        extents_.push_back(std::nullopt);
      }
    }
  }

  // f(remapped coords, value) for every nonzero, in iteration order.
  template <class F>
  std::uint64_t for_each_remapped(F&& f) {
    if (plan_.strategy == RemapStrategy::materialized) {
      for (std::size_t n = 0; n < buffer_.size(); ++n) {
        if (buffer_.values[n] != 0.0) f(buffer_.at(n), buffer_.values[n]);
      }
      return buffer_.size();
    }
    CounterState state(plan_.counter_modes, extents_);
    RemapEvaluator ev(remap_, state);
    Coord canon(src_.order()), out(remap_.dst_arity());
    std::uint64_t visits = 0;
    walk_leaves(src_, [&](std::span<const Index> lc, Index, double v) {
      ++visits;
      if (v == 0.0) return;
      project(src_, lc, canon);
      ev.eval(canon, out);
      f(std::span<const Index>(out), v);
    });
    return visits;
  }

  void materialize() {
    auto& ph = trace_.phase("remap");
    CounterState state(plan_.counter_modes, extents_);
    RemapEvaluator ev(remap_, state);
    const std::size_t arity = remap_.dst_arity();
    Coord canon(src_.order()), out(arity);
    std::vector<Index> coords;
    std::vector<double> values;
    walk_leaves(src_, [&](std::span<const Index> lc, Index, double v) {
      ++ph.visits;
      if (v == 0.0) return;
      project(src_, lc, canon);
      ev.eval(canon, out);
      coords.insert(coords.end(), out.begin(), out.end());
      values.push_back(v);
    });
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto key = [&](std::size_t n) {
      return std::span<const Index>(coords).subspan(n * arity, arity);
    };
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return lex_less(key(a), key(b)); });
    buffer_.arity = arity;
    buffer_.coords.reserve(coords.size());
    for (std::size_t n : idx) {
      auto k = key(n);
      buffer_.coords.insert(buffer_.coords.end(), k.begin(), k.end());
      buffer_.values.push_back(values[n]);
    }
    ph.passes += 1;
    ph.bytes += values.size() * (arity + 1) * sizeof(Index) * 2;
  }

  void analyze() {
    auto& ph = trace_.phase("analysis");
    ExecOptions eo;
    eo.counter_modes = plan_.counter_modes;
    for (const auto& a : plan_.analysis) {
      QueryResults r = plan_.strategy == RemapStrategy::materialized
                           ? execute_query(a.optimized, buffer_, eo)
                           : execute_query(a.optimized, src_, eo);
      ph.passes += r.trace.passes;
      ph.visits += r.trace.visits;
      ph.bytes += r.trace.bytes;
      results_.emplace(a.level, std::move(r));
    }
  }

  void assemble() {
    const BoundFormat& tf = plan_.target_format;
    const std::size_t n = tf.def->levels.size();
    out_.format = tf.def->name;
    out_.params = tf.params;
    out_.dims = plan_.dims;
    out_.projection = tf.def->projection;
    out_.levels.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      out_.levels[l].kind = tf.def->levels[l].kind;
      out_.levels[l].params = tf.level_params[l];
    }
    for (std::size_t l = 0; l < n; ++l) {
      auto it = results_.find(l);
      LevelContext ctx{l, plan_.remapped_bounds[l], it == results_.end() ? nullptr : &it->second,
                       log_};
      levels_.push_back(make_level_format(out_.levels[l], ctx));
    }
    sizes_.assign(n + 1, 0);
    sizes_[0] = 1;
    for (std::size_t gi = 0; gi < plan_.groups.size(); ++gi) {
      const AssemblyGroup& g = plan_.groups[gi];
      if (g.edges != EdgeMode::none) insert_edges(g);
      for (std::size_t l = g.first; l <= g.last; ++l) {
        levels_[l]->init_coords(sizes_[l]);
        sizes_[l + 1] = levels_[l]->get_size(sizes_[l]);
      }
      const bool last = gi + 1 == plan_.groups.size();
      if (last) out_.values.assign(static_cast<std::size_t>(sizes_[n]), 0.0);
      for (std::size_t l = g.first; l <= g.last; ++l) levels_[l]->init_pos();
      if (g.pass) insert_coords(g, last);
      for (std::size_t l = g.first; l <= g.last; ++l) levels_[l]->finalize_pos();
    }
    if (n == 0) out_.values.assign(1, 0.0);
    refresh_order_flags(out_);
    out_.unique_coords = true;
  }

  void insert_edges(const AssemblyGroup& g) {
    auto& ph = trace_.phase("assembly:edges");
    LevelFormat& f = *levels_[g.first];
    const Index sz = sizes_[g.first];
    const bool seq = g.edges == EdgeMode::sequenced;
    if (seq) f.seq_init_edges(sz);
    else f.unseq_init_edges(sz);
    // parents are the positions of the already assembled level above
    walk_levels(out_, g.first, [&](std::span<const Index> coords, Index parent) {
      f.note_parent(parent, coords);
      const Index count = f.edge_count(coords);
      if (seq) f.seq_insert_edges(parent, count);
      else f.unseq_insert_edges(parent, count);
    });
    if (!seq) f.unseq_finalize_edges();
    ph.bytes += static_cast<std::uint64_t>(sz + 1) * sizeof(Index);
  }

  void insert_coords(const AssemblyGroup& g, bool last) {
    auto& ph = trace_.phase("assembly:coords");
    std::map<std::size_t, std::unordered_map<std::pair<Index, Index>, Index, PairHash>> pair_seen;
    std::map<std::size_t, std::unordered_map<Coord, Index, CoordHash>> tuple_seen;
    for (std::size_t l : g.dedup_levels) {
      if (out_.levels[l].params.unique) pair_seen[l];
      else tuple_seen[l];
    }
    Coord key;
    const std::uint64_t visits = for_each_remapped([&](std::span<const Index> c, double v) {
      Index parent = 0;
      for (std::size_t l = 0; l < g.first; ++l) {
        auto p = levels_[l]->locate(parent, c);
        if (!p) throw Error(Errc::ValidationFailed, "nonzero has no position in an outer level");
        parent = *p;
      }
      for (std::size_t l = g.first; l <= g.last; ++l) {
        LevelFormat& f = *levels_[l];
        Index pos = -1;
        if (!f.uses_yield()) {
          pos = f.get_pos(parent, c);
          f.insert_coord(parent, pos, c);
        } else if (auto ps = pair_seen.find(l); ps != pair_seen.end()) {
          auto [it, fresh] = ps->second.try_emplace({parent, c[l]}, -1);
          if (fresh) {
            it->second = f.yield_pos(parent, c);
            f.insert_coord(parent, it->second, c);
          }
          pos = it->second;
        } else if (auto ts = tuple_seen.find(l); ts != tuple_seen.end()) {
          key.assign(1, parent);
          key.insert(key.end(), c.begin() + static_cast<std::ptrdiff_t>(l),
                     c.begin() + static_cast<std::ptrdiff_t>(g.last) + 1);
          auto [it, fresh] = ts->second.try_emplace(key, -1);
          if (fresh) {
            it->second = f.yield_pos(parent, c);
            f.insert_coord(parent, it->second, c);
          }
          pos = it->second;
        } else {
          pos = f.yield_pos(parent, c);
          f.insert_coord(parent, pos, c);
        }
        parent = pos;
      }
      if (last) out_.values[static_cast<std::size_t>(parent)] += v;
    });
    ph.passes += 1;
    ph.visits += visits;
    ph.bytes += visits * (out_.levels.size() + 1) * sizeof(Index);
  }

  const ConversionPlan& plan_;
  const TensorStorage& src_;
  ProtocolLog* log_;
  const RemapProgram& remap_;
  std::vector<std::optional<std::vector<DimBounds>>> extents_;
  RemappedBuffer buffer_;
  std::map<std::size_t, QueryResults> results_;
  TensorStorage out_;
  std::vector<std::unique_ptr<LevelFormat>> levels_;
  std::vector<Index> sizes_;
  PhaseTrace trace_;
};

}  // namespace

Conversion execute(const ConversionPlan& plan, const TensorStorage& src, ProtocolLog* log) {
  if (!plan.composite) return Executor(plan, src, log).run();
  Conversion mid = execute(plan.stages.at(0), src, log);
  Conversion out = execute(plan.stages.at(1), mid.tensor, log);
  mid.trace += out.trace;
  out.trace = std::move(mid.trace);
  return out;
}

// ---------------------------------------------------------------------------
// Explain
// ---------------------------------------------------------------------------

namespace {

void explain_into(const ConversionPlan& plan, std::ostringstream& out, const std::string& indent) {
  out << indent << "plan: " << plan.source << " -> " << plan.target << "\n";
  out << indent << "dims: ";
  for (std::size_t d = 0; d < plan.dims.size(); ++d) out << (d ? "x" : "") << plan.dims[d];
  out << "\n";
  if (plan.composite) {
    out << indent << "composite: via coo\n";
    for (const auto& s : plan.stages) explain_into(s, out, indent + "  ");
    return;
  }
  const BoundFormat& tf = plan.target_format;
  out << indent << "remap: " << tf.def->remap_text << " [" << strategy_name(plan.strategy) << "]\n";
  for (const auto& [k, v] : tf.params) out << indent << "param: " << k << "=" << v << "\n";
  if (plan.counter_modes.empty()) {
    out << indent << "counters: none\n";
  } else {
    for (std::size_t c = 0; c < plan.counter_modes.size(); ++c) {
      std::string label = "#";
      for (const auto& k : tf.remap.counters()[c].key_vars) label += (label.size() > 1 ? " " : "") + k;
      out << indent << "counter " << label << ": " << counter_mode_name(plan.counter_modes[c]) << "\n";
    }
  }
  out << indent << "analysis:" << (plan.analysis.empty() ? " none" : "") << "\n";
  for (const auto& a : plan.analysis) {
    out << indent << "  level " << a.level << ": " << to_string(a.query) << "\n";
    for (std::size_t k = 0; k < a.canonical.stmts.size(); ++k) {
      out << indent << "    " << a.canonical.aggs[k].label
          << " canonical: " << render(*a.canonical.stmts[k]) << "\n";
      out << indent << "    " << a.optimized.aggs[k].label
          << " optimized: " << render(*a.optimized.stmts[k]) << "\n";
    }
  }
  out << indent << "assembly:\n";
  std::size_t edge_phases = 0;
  for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
    const AssemblyGroup& g = plan.groups[gi];
    out << indent << "  group " << gi << ": levels " << g.first << "-" << g.last << " [";
    for (std::size_t l = g.first; l <= g.last; ++l) {
      out << (l > g.first ? " " : "") << level_kind_name(tf.def->levels[l].kind);
    }
    out << "]; edge-insertion: " << edge_mode_name(g.edges) << "; dedup: ";
    if (g.dedup_levels.empty()) out << "none";
    for (std::size_t k = 0; k < g.dedup_levels.size(); ++k) out << (k ? "," : "") << "level " << g.dedup_levels[k];
    out << "; coordinates: " << (g.pass ? "one pass" : "no pass") << "\n";
    if (g.edges != EdgeMode::none) ++edge_phases;
  }
  out << indent << "edge-insertion phases: " << edge_phases << "\n";
}

}  // namespace

std::string explain(const ConversionPlan& plan) {
  std::ostringstream out;
  explain_into(plan, out, "");
  return out.str();
}

// ---------------------------------------------------------------------------
// Convenience entry points
// ---------------------------------------------------------------------------

Conversion convert(const TensorStorage& src, std::string_view target,
                   const std::map<std::string, Index>& params, ProtocolLog* log) {
  PlanOptions opts;
  opts.params = params;
  const ConversionPlan plan = plan_for(src, FormatRegistry::global().get(target), opts);
  return execute(plan, src, log);
}

Conversion convert_via(const TensorStorage& src, std::string_view mid, std::string_view dst,
                       const std::map<std::string, Index>& params, ProtocolLog* log) {
  if (mid == src.format) return convert(src, dst, params, log);
  Conversion a = convert(src, mid, params, log);
  Conversion b = convert(a.tensor, dst, params, log);
  a.trace += b.trace;
  b.trace = std::move(a.trace);
  return b;
}

QueryResults run_query(const TensorStorage& src, std::string_view query, std::string_view remap,
                       const std::map<std::string, Index>& params) {
  std::string text(remap);
  if (text.empty()) {
    static const char* names[] = {"i", "j", "k", "l", "m", "n", "p", "q"};
    if (src.order() > std::size(names)) throw Error(Errc::ArityError, "a remap is required for order > 8");
    std::string vars;
    for (std::size_t d = 0; d < src.order(); ++d) vars += std::string(d ? "," : "") + names[d];
    text = "(" + vars + ") -> (" + vars + ")";
  }
  const RemapProgram prog = parse_remap(text).bind(params);
  if (prog.src_arity() != src.order()) throw Error(Errc::ArityError, "remap arity differs from the tensor order");
  const Query q = parse_query(query, prog.dim_names());
  std::vector<DimBounds> bounds;
  for (Index d : src.dims) bounds.push_back({0, d - 1});
  const SourceProfile profile = profile_of(src);
  const QueryProgram p = optimize(lower_to_canonical(q, prog, bounds), profile);
  std::vector<std::string> grouped;
  for (int cv : profile.grouped_prefix()) grouped.push_back(prog.src_vars()[static_cast<std::size_t>(cv)]);
  ExecOptions eo;
  for (const auto& c : prog.counters()) eo.counter_modes.push_back(choose_counter_mode(c, grouped));
  return execute_query(p, src, eo);
}

TensorStorage from_canonical(const CanonicalTensor& t, std::string_view format,
                             const std::map<std::string, Index>& params) {
  TensorStorage coo = coo_storage(t);
  if (format == "coo") return coo;
  return convert(coo, format, params).tensor;
}

}  // namespace tmorph
