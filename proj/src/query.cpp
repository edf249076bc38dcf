#include "tensormorph/query.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>
#include <unordered_map>

#include "tensormorph/error.hpp"

namespace tmorph {

std::string_view agg_kind_name(AggKind k) {
  switch (k) {
    case AggKind::count: return "count";
    case AggKind::max: return "max";
    case AggKind::min: return "min";
    case AggKind::id: return "id";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

struct QToken {
  std::string text;
  std::size_t offset;
  bool ident;
};

std::vector<QToken> lex_query(std::string_view src) {
  std::vector<QToken> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) {
        ++i;
      }
      out.push_back({std::string(src.substr(start, i - start)), start, true});
    } else if (src.substr(i, 2) == "->") {
      out.push_back({"->", start, false});
      i += 2;
    } else if (std::string_view("[](),").find(c) != std::string_view::npos) {
      out.push_back({std::string(1, c), start, false});
      ++i;
    } else {
      throw Error(Errc::SyntaxError,
                  "unexpected character '" + std::string(1, c) + "' at offset " +
                      std::to_string(start),
                  static_cast<std::int64_t>(start));
    }
  }
  out.push_back({"", src.size(), false});
  return out;
}

class QueryParser {
 public:
  explicit QueryParser(std::string_view text) : toks_(lex_query(text)) {}

  Query parse() {
    Query q;
    keyword("select");
    expect("[");
    if (!accept("]")) {
      do q.group_vars.push_back(ident());
      while (accept(","));
      expect("]");
    }
    expect("->");
    std::set<std::string> labels;
    do {
      const QToken& fn = peek();
      Aggregation a;
      const std::string name = ident();
      if (name == "count") a.kind = AggKind::count;
      else if (name == "max") a.kind = AggKind::max;
      else if (name == "min") a.kind = AggKind::min;
      else if (name == "id") a.kind = AggKind::id;
      else fail("unknown aggregation '" + name + "'", fn.offset);
      expect("(");
      if (!accept(")")) {
        do a.args.push_back(ident());
        while (accept(","));
        expect(")");
      }
      const bool arity_ok = a.kind == AggKind::id      ? a.args.empty()
                            : a.kind == AggKind::count ? !a.args.empty()
                                                       : a.args.size() == 1;
      if (!arity_ok) fail(name + " takes the wrong number of arguments", fn.offset);
      keyword("as");
      const QToken& lt = peek();
      a.label = ident();
      if (!labels.insert(a.label).second) fail("duplicate label '" + a.label + "'", lt.offset);
      q.aggs.push_back(std::move(a));
    } while (accept(","));
    if (!peek().text.empty()) fail("trailing input '" + peek().text + "'", peek().offset);
    return q;
  }

 private:
  const QToken& peek() const { return toks_[pos_]; }
  [[noreturn]] void fail(const std::string& msg, std::size_t offset) const {
    throw Error(Errc::SyntaxError, msg + " at offset " + std::to_string(offset),
                static_cast<std::int64_t>(offset));
  }
  bool accept(std::string_view p) {
    if (!peek().ident && peek().text == p) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(std::string_view p) {
    if (!accept(p)) fail("expected '" + std::string(p) + "'", peek().offset);
  }
  void keyword(std::string_view k) {
    if (!peek().ident || peek().text != k) fail("expected '" + std::string(k) + "'", peek().offset);
    ++pos_;
  }
  std::string ident() {
    if (!peek().ident) fail("expected identifier", peek().offset);
    return toks_[pos_++].text;
  }

  std::vector<QToken> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

Query parse_query(std::string_view text) { return QueryParser(text).parse(); }

Query parse_query(std::string_view text, std::span<const std::string> dim_names) {
  Query q = parse_query(text);
  bind_query_vars(q, dim_names);
  return q;
}

std::string to_string(const Query& q) {
  std::string out = "select [";
  for (std::size_t k = 0; k < q.group_vars.size(); ++k) {
    out += (k ? "," : "") + q.group_vars[k];
  }
  out += "] -> ";
  for (std::size_t a = 0; a < q.aggs.size(); ++a) {
    if (a) out += ", ";
    out += std::string(agg_kind_name(q.aggs[a].kind)) + "(";
    for (std::size_t k = 0; k < q.aggs[a].args.size(); ++k) {
      out += (k ? "," : "") + q.aggs[a].args[k];
    }
    out += ") as " + q.aggs[a].label;
  }
  return out;
}

std::map<std::string, std::size_t> bind_query_vars(const Query& q,
                                                   std::span<const std::string> dim_names) {
  std::map<std::string, std::size_t> bound;
  std::vector<bool> used(dim_names.size(), false);
  const auto bind = [&](const std::string& v) {
    if (bound.count(v)) return;
    for (std::size_t d = 0; d < dim_names.size(); ++d) {
      if (dim_names[d] == v) {
        bound[v] = d;
        used[d] = true;
        return;
      }
    }
  };
  std::vector<std::string> all = q.group_vars;
  for (const auto& a : q.aggs) all.insert(all.end(), a.args.begin(), a.args.end());
  for (const auto& v : all) bind(v);
  for (const auto& v : all) {
    if (bound.count(v)) continue;
    std::size_t d = 0;
    while (d < dim_names.size() && (used[d] || !dim_names[d].empty())) ++d;
    if (d == dim_names.size()) throw Error(Errc::UnknownVar, "query variable '" + v + "'");
    bound[v] = d;
    used[d] = true;
  }

  const std::size_t m = q.group_vars.size();
  for (std::size_t k = 0; k < m; ++k) {
    if (bound.at(q.group_vars[k]) != k) {
      throw Error(Errc::ValidationFailed,
                  "group variables must be the leading remapped dimensions in order");
    }
  }
  for (const auto& a : q.aggs) {
    std::vector<std::size_t> dims;
    for (const auto& v : a.args) dims.push_back(bound.at(v));
    if (a.kind == AggKind::count) {
      std::sort(dims.begin(), dims.end());
      for (std::size_t k = 0; k < dims.size(); ++k) {
        if (dims[k] != m + k) {
          throw Error(Errc::NonContiguousCountArgs,
                      "count arguments of '" + a.label +
                          "' must be the dimensions directly after the group");
        }
      }
    } else if (!dims.empty() && dims[0] < m) {
      throw Error(Errc::ValidationFailed,
                  "aggregated variable of '" + a.label + "' is a group variable");
    }
  }
  return bound;
}

// ---------------------------------------------------------------------------
// IR construction and printing
// ---------------------------------------------------------------------------

namespace {

const std::string kSource = "B";
const std::string kWidth = "B'";

TermPtr make_access(std::string tensor, std::vector<ExprPtr> idx) {
  auto t = std::make_shared<Term>();
  t->kind = Term::Kind::access;
  t->tensor = std::move(tensor);
  t->indices = std::move(idx);
  return t;
}

TermPtr make_width(std::vector<ExprPtr> idx, std::size_t depth) {
  auto t = std::make_shared<Term>();
  t->kind = Term::Kind::width;
  t->tensor = kWidth;
  t->indices = std::move(idx);
  t->depth = depth;
  return t;
}

TermPtr make_map(TermPtr inner, ExprPtr value) {
  auto t = std::make_shared<Term>();
  t->kind = Term::Kind::map;
  t->inner = std::move(inner);
  t->value = std::move(value);
  return t;
}

StmtPtr make_assign(std::string target, std::vector<ExprPtr> idx, ReduceOp op, TermPtr rhs) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::assign;
  s->target = std::move(target);
  s->target_indices = std::move(idx);
  s->op = op;
  s->rhs = std::move(rhs);
  return s;
}

StmtPtr make_where(StmtPtr consumer, StmtPtr producer) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::where;
  s->consumer = std::move(consumer);
  s->producer = std::move(producer);
  return s;
}

struct Nest {
  std::vector<std::string> vars;
  StmtPtr assign;
};

std::optional<Nest> as_nest(const StmtPtr& s) {
  Nest n;
  const Stmt* cur = s.get();
  StmtPtr holder = s;
  while (cur->kind == Stmt::Kind::forall) {
    n.vars.push_back(cur->var);
    holder = cur->body;
    cur = holder.get();
  }
  if (cur->kind != Stmt::Kind::assign) return std::nullopt;
  n.assign = holder;
  return n;
}

StmtPtr build_nest(const std::vector<std::string>& vars, StmtPtr body) {
  for (auto it = vars.rbegin(); it != vars.rend(); ++it) {
    auto s = std::make_shared<Stmt>();
    s->kind = Stmt::Kind::forall;
    s->var = *it;
    s->body = std::move(body);
    body = std::move(s);
  }
  return body;
}

std::vector<ExprPtr> plain_vars(const std::vector<std::string>& names) {
  std::vector<ExprPtr> out;
  for (const auto& n : names) out.push_back(make_var(n));
  return out;
}

const Term& base_of(const Term& t) { return t.kind == Term::Kind::map ? base_of(*t.inner) : t; }

std::string render_indices(const std::vector<ExprPtr>& idx) {
  std::string out = "[";
  for (std::size_t k = 0; k < idx.size(); ++k) out += (k ? "," : "") + to_string(idx[k]);
  return out + "]";
}

std::string render_term(const Term& t) {
  switch (t.kind) {
    case Term::Kind::access: return t.tensor + render_indices(t.indices);
    case Term::Kind::width: return "width(" + t.tensor + render_indices(t.indices) + ")";
    case Term::Kind::map: return "map(" + render_term(*t.inner) + ", " + to_string(t.value) + ")";
    case Term::Kind::constant: return std::to_string(t.constant);
  }
  return "?";
}

const char* op_text(ReduceOp op) {
  switch (op) {
    case ReduceOp::assign: return "=";
    case ReduceOp::add: return "+=";
    case ReduceOp::max: return "max=";
    case ReduceOp::bor: return "|=";
  }
  return "?";
}

}  // namespace

std::string render(const Stmt& s) {
  switch (s.kind) {
    case Stmt::Kind::forall: return "forall " + s.var + " " + render(*s.body);
    case Stmt::Kind::assign:
      return s.target + render_indices(s.target_indices) + " " + op_text(s.op) + " " +
             render_term(*s.rhs);
    case Stmt::Kind::where:
      return "(" + render(*s.consumer) + ") where (" + render(*s.producer) + ")";
  }
  return "?";
}

std::string render(const QueryProgram& p) {
  std::string out;
  for (std::size_t a = 0; a < p.stmts.size(); ++a) {
    out += p.aggs[a].label + ": " + render(*p.stmts[a]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lowering
// ---------------------------------------------------------------------------

QueryProgram lower_to_canonical(const Query& q, const RemapProgram& prog,
                                std::span<const DimBounds> src_bounds,
                                std::span<const std::string> dim_names) {
  if (!prog.bound() && !prog.params().empty()) {
    throw Error(Errc::MissingParameter, "remap parameters must be bound before lowering");
  }
  if (src_bounds.size() != prog.src_arity()) {
    throw Error(Errc::OrderMismatch, "source bounds do not match remap arity");
  }
  const auto names = dim_names.empty() ? std::span<const std::string>(prog.dim_names()) : dim_names;
  const auto binding = bind_query_vars(q, names);

  QueryProgram p;
  p.source_vars = prog.src_vars();
  p.source_bounds.assign(src_bounds.begin(), src_bounds.end());
  p.counters = prog.counters();

  std::map<std::string, DimBounds> var_bounds;
  std::vector<Index> dims;
  for (std::size_t s = 0; s < src_bounds.size(); ++s) {
    var_bounds[p.source_vars[s]] = src_bounds[s];
    dims.push_back(src_bounds[s].upper + 1);
  }
  std::vector<ExprPtr> E;
  std::vector<DimBounds> EB;
  for (std::size_t d = 0; d < prog.dst_arity(); ++d) {
    E.push_back(fold_constants(prog.dst_inlined(d)));
    EB.push_back(expr_bounds(*E.back(), prog, var_bounds, dims));
  }

  const auto B = make_access(kSource, plain_vars(p.source_vars));
  const std::size_t m = q.group_vars.size();
  std::vector<ExprPtr> group_idx(E.begin(), E.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<DimBounds> group_bounds(EB.begin(), EB.begin() + static_cast<std::ptrdiff_t>(m));

  for (const auto& a : q.aggs) {
    AggPlan plan{a.label, a.kind, group_bounds, 0, 0};
    StmtPtr stmt;
    switch (a.kind) {
      case AggKind::id:
        stmt = build_nest(p.source_vars,
                          make_assign(a.label, group_idx, ReduceOp::bor, make_map(B, make_const(1))));
        break;
      case AggKind::count: {
        std::vector<std::size_t> cd;
        for (const auto& v : a.args) cd.push_back(binding.at(v));
        std::sort(cd.begin(), cd.end());
        std::vector<std::string> wvars = q.group_vars;
        std::vector<ExprPtr> widx = group_idx;
        std::vector<DimBounds> wb = group_bounds;
        for (std::size_t d : cd) {
          // consumer variable named after the query variable bound to d
          for (const auto& [v, dim] : binding) {
            if (dim == d) wvars.push_back(v);
          }
          widx.push_back(E[d]);
          wb.push_back(EB[d]);
        }
        const std::string w = "W_" + a.label;
        p.tensors[w] = TensorDecl{wb, true};
        auto producer =
            build_nest(p.source_vars, make_assign(w, widx, ReduceOp::bor, make_map(B, make_const(1))));
        auto consumer = build_nest(
            wvars, make_assign(a.label, plain_vars(q.group_vars), ReduceOp::add,
                               make_map(make_access(w, plain_vars(wvars)), make_const(1))));
        stmt = make_where(consumer, producer);
        break;
      }
      case AggKind::max:
      case AggKind::min: {
        const std::size_t d = binding.at(a.args[0]);
        plan.s = EB[d].lower;
        plan.t = EB[d].upper;
        ExprPtr value =
            a.kind == AggKind::max
                ? make_binary(ExprOp::add, make_binary(ExprOp::sub, E[d], make_const(plan.s)),
                              make_const(1))
                : make_binary(ExprOp::sub, make_const(plan.t + 1), E[d]);
        stmt = build_nest(p.source_vars, make_assign(a.label, group_idx, ReduceOp::max,
                                                     make_map(B, fold_constants(value))));
        break;
      }
    }
    p.tensors[a.label] = TensorDecl{group_bounds, false};
    p.aggs.push_back(std::move(plan));
    p.stmts.push_back(std::move(stmt));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Rewrite rules
// ---------------------------------------------------------------------------

namespace {

struct OptContext {
  QueryProgram& prog;
  const SourceProfile& src;
};

bool driver_unique(const Term& base, const OptContext& cx) {
  switch (base.kind) {
    case Term::Kind::width: return true;
    case Term::Kind::access:
      return base.tensor != kSource || cx.src.unique_coords;
    default: return false;
  }
}

bool mentions(const std::vector<ExprPtr>& idx, const std::string& var) {
  for (const auto& e : idx) {
    std::vector<std::string> vs;
    collect_free_vars(*e, vs);
    if (std::find(vs.begin(), vs.end(), var) != vs.end()) return true;
  }
  return false;
}

StmtPtr with_op(const StmtPtr& assign, ReduceOp op) {
  return make_assign(assign->target, assign->target_indices, op, assign->rhs);
}

// A op= rhs  ->  A = rhs, when every loop variable indexes A directly.
StmtPtr reduction_to_assign(const StmtPtr& s, OptContext& cx) {
  if (s->kind == Stmt::Kind::where) {
    return make_where(reduction_to_assign(s->consumer, cx), reduction_to_assign(s->producer, cx));
  }
  auto n = as_nest(s);
  if (!n || n->assign->op == ReduceOp::assign) return s;
  const Stmt& a = *n->assign;
  for (const auto& v : n->vars) {
    const bool direct = std::any_of(a.target_indices.begin(), a.target_indices.end(),
                                    [&](const ExprPtr& e) { return is_var(*e, v); });
    if (!direct) return s;
  }
  const Term& base = base_of(*a.rhs);
  const bool idempotent = a.op == ReduceOp::bor || a.op == ReduceOp::max;
  if (!idempotent && !driver_unique(base, cx)) return s;
  if (base.kind == Term::Kind::constant) return s;
  return build_nest(n->vars, with_op(n->assign, ReduceOp::assign));
}

TermPtr replace_base(const Term& t, const TermPtr& repl, const std::map<std::string, ExprPtr>& sub) {
  if (t.kind != Term::Kind::map) return repl;
  return make_map(replace_base(*t.inner, repl, sub), substitute(t.value, sub));
}

// (forall w A op= f(W_w)) where (forall j W_e(j) = g(j))  ->  forall j A op= f(g(j))
StmtPtr inline_temporary(const StmtPtr& s, OptContext& cx) {
  if (s->kind != Stmt::Kind::where) return s;
  auto consumer = inline_temporary(s->consumer, cx);
  auto producer = inline_temporary(s->producer, cx);
  auto cn = as_nest(consumer);
  auto pn = as_nest(producer);
  const auto keep = [&] { return make_where(consumer, producer); };
  if (!cn || !pn) return keep();
  const Stmt& pa = *pn->assign;
  const Stmt& ca = *cn->assign;
  auto decl = cx.prog.tensors.find(pa.target);
  if (pa.op != ReduceOp::assign || decl == cx.prog.tensors.end() || !decl->second.temporary) {
    return keep();
  }
  if (!driver_unique(base_of(*pa.rhs), cx)) return keep();
  const Term& cbase = base_of(*ca.rhs);
  if (cbase.kind != Term::Kind::access || cbase.tensor != pa.target) return keep();
  if (cbase.indices.size() != pa.target_indices.size()) return keep();
  std::map<std::string, ExprPtr> sub;
  for (std::size_t k = 0; k < cbase.indices.size(); ++k) {
    if (cbase.indices[k]->op != ExprOp::var) return keep();
    sub[cbase.indices[k]->name] = pa.target_indices[k];
  }
  for (const auto& v : cn->vars) {
    if (!sub.count(v)) return keep();
  }
  std::vector<ExprPtr> idx;
  for (const auto& e : ca.target_indices) idx.push_back(substitute(e, sub));
  return build_nest(pn->vars, make_assign(ca.target, std::move(idx), ca.op,
                                          replace_base(*ca.rhs, pa.rhs, sub)));
}

TermPtr fold_term(const TermPtr& t) {
  switch (t->kind) {
    case Term::Kind::map: {
      auto inner = fold_term(t->inner);
      auto value = fold_constants(t->value);
      // map(map(x, c), v) -> map(x, v) for a nonzero constant c
      if (inner->kind == Term::Kind::map && inner->value->op == ExprOp::constant &&
          inner->value->value != 0) {
        return make_map(inner->inner, value);
      }
      return make_map(inner, value);
    }
    case Term::Kind::access:
    case Term::Kind::width: {
      auto out = std::make_shared<Term>(*t);
      for (auto& e : out->indices) e = fold_constants(e);
      return out;
    }
    default: return t;
  }
}

StmtPtr constant_fold(const StmtPtr& s) {
  switch (s->kind) {
    case Stmt::Kind::where:
      return make_where(constant_fold(s->consumer), constant_fold(s->producer));
    case Stmt::Kind::forall: {
      auto out = std::make_shared<Stmt>(*s);
      out->body = constant_fold(s->body);
      return out;
    }
    case Stmt::Kind::assign: {
      std::vector<ExprPtr> idx;
      for (const auto& e : s->target_indices) idx.push_back(fold_constants(e));
      return make_assign(s->target, std::move(idx), s->op, fold_term(s->rhs));
    }
  }
  return s;
}

// forall (all source vars) A += map(B, 1)  ->  forall (outer level vars) A += width(B')
StmtPtr simplify_width_count(const StmtPtr& s, OptContext& cx) {
  if (s->kind == Stmt::Kind::where) {
    return make_where(simplify_width_count(s->consumer, cx),
                      simplify_width_count(s->producer, cx));
  }
  auto n = as_nest(s);
  if (!n) return s;
  const Stmt& a = *n->assign;
  if (a.op != ReduceOp::add || a.rhs->kind != Term::Kind::map) return s;
  const Term& inner = *a.rhs->inner;
  if (inner.kind != Term::Kind::access || inner.tensor != kSource) return s;
  if (a.rhs->value->op != ExprOp::constant || a.rhs->value->value != 1) return s;

  const auto& levels = cx.src.levels;
  const auto& sv = cx.prog.source_vars;
  if (!cx.src.iterable || levels.empty() || levels.size() != sv.size()) return s;
  std::vector<bool> seen(sv.size(), false);
  for (const auto& L : levels) {
    if (L.canonical_var < 0 || seen[static_cast<std::size_t>(L.canonical_var)]) return s;
    seen[static_cast<std::size_t>(L.canonical_var)] = true;
    if (!L.props.stores_only_nonzeros || !L.props.unique) return s;
  }
  for (std::size_t k = 0; k < inner.indices.size(); ++k) {
    if (!is_var(*inner.indices[k], sv[k])) return s;
  }
  std::vector<std::string> prefix;
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    prefix.push_back(sv[static_cast<std::size_t>(levels[l].canonical_var)]);
  }
  const std::string& innermost = sv[static_cast<std::size_t>(levels.back().canonical_var)];
  if (mentions(a.target_indices, innermost)) return s;
  return build_nest(prefix, make_assign(a.target, a.target_indices, ReduceOp::add,
                                        make_width(plain_vars(prefix), levels.size() - 1)));
}

// forall j A max= map(B, #c + 1)  ->  (forall keys A max= H_keys) where (forall j H_keys += map(B, 1))
StmtPtr counter_to_histogram(const StmtPtr& s, OptContext& cx) {
  if (s->kind == Stmt::Kind::where) {
    return make_where(counter_to_histogram(s->consumer, cx),
                      counter_to_histogram(s->producer, cx));
  }
  auto n = as_nest(s);
  if (!n) return s;
  const Stmt& a = *n->assign;
  if (a.op != ReduceOp::max || a.rhs->kind != Term::Kind::map) return s;
  const Term& inner = *a.rhs->inner;
  if (inner.kind != Term::Kind::access || inner.tensor != kSource) return s;
  const Expr& v = *a.rhs->value;
  if (v.op != ExprOp::add || v.args[0]->op != ExprOp::counter ||
      v.args[1]->op != ExprOp::constant || v.args[1]->value != 1) {
    return s;
  }
  const CounterSpec& spec = cx.prog.counters.at(static_cast<std::size_t>(v.args[0]->counter));
  std::vector<std::string> keys;
  for (const auto& k : spec.key_exprs) {
    if (k->op != ExprOp::var) return s;
    if (std::find(keys.begin(), keys.end(), k->name) == keys.end()) keys.push_back(k->name);
  }
  for (const auto& e : a.target_indices) {
    std::vector<std::string> vs;
    collect_free_vars(*e, vs);
    if (has_counter(*e)) return s;
    for (const auto& x : vs) {
      if (std::find(keys.begin(), keys.end(), x) == keys.end()) return s;
    }
  }
  std::vector<DimBounds> hb;
  for (const auto& k : keys) {
    const auto it = std::find(cx.prog.source_vars.begin(), cx.prog.source_vars.end(), k);
    hb.push_back(cx.prog.source_bounds[static_cast<std::size_t>(it - cx.prog.source_vars.begin())]);
  }
  const std::string h = "H_" + a.target;
  cx.prog.tensors[h] = TensorDecl{hb, true};
  auto producer = build_nest(n->vars, make_assign(h, plain_vars(keys), ReduceOp::add,
                                                  make_map(a.rhs->inner, make_const(1))));
  auto consumer = build_nest(keys, make_assign(a.target, a.target_indices, ReduceOp::max,
                                               make_access(h, plain_vars(keys))));
  return make_where(consumer, producer);
}

void collect_tensors(const Stmt& s, std::set<std::string>& used) {
  switch (s.kind) {
    case Stmt::Kind::forall: collect_tensors(*s.body, used); break;
    case Stmt::Kind::where:
      collect_tensors(*s.consumer, used);
      collect_tensors(*s.producer, used);
      break;
    case Stmt::Kind::assign: {
      used.insert(s.target);
      const Term* t = s.rhs.get();
      while (t->kind == Term::Kind::map) t = t->inner.get();
      if (t->kind == Term::Kind::access) used.insert(t->tensor);
      break;
    }
  }
}

}  // namespace

QueryProgram optimize(const QueryProgram& in, const SourceProfile& src) {
  QueryProgram p = in;
  OptContext cx{p, src};
  for (auto& stmt : p.stmts) {
    for (int round = 0; round < 8; ++round) {
      StmtPtr next = reduction_to_assign(stmt, cx);
      next = inline_temporary(next, cx);
      next = constant_fold(next);
      next = simplify_width_count(next, cx);
      next = counter_to_histogram(next, cx);
      const bool changed = render(*next) != render(*stmt);
      stmt = next;
      if (!changed) break;
    }
  }
  std::set<std::string> used;
  for (const auto& s : p.stmts) collect_tensors(*s, used);
  for (auto it = p.tensors.begin(); it != p.tensors.end();) {
    if (it->second.temporary && !used.count(it->first)) it = p.tensors.erase(it);
    else ++it;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

std::size_t QueryResult::flat(std::span<const Index> coords) const {
  if (coords.size() != bounds.size()) throw Error(Errc::DimMismatch, "result coordinate arity");
  std::size_t f = 0;
  for (std::size_t d = 0; d < bounds.size(); ++d) {
    if (!bounds[d].contains(coords[d])) {
      throw Error(Errc::CoordOutOfRange, "coordinate outside result bounds");
    }
    f = f * static_cast<std::size_t>(bounds[d].extent()) +
        static_cast<std::size_t>(coords[d] - bounds[d].lower);
  }
  return f;
}

std::optional<Index> QueryResult::decode(Index r) const {
  switch (kind) {
    case AggKind::count:
    case AggKind::id: return r;
    case AggKind::max:
      if (r == 0) return std::nullopt;
      return r + s - 1;
    case AggKind::min:
      if (r == 0) return std::nullopt;
      return -r + t + 1;
  }
  return std::nullopt;
}

std::optional<Index> QueryResult::value_at(std::span<const Index> coords) const {
  return decode(raw_at(coords));
}

const QueryResult& QueryResults::at(const std::string& label) const {
  auto it = by_label.find(label);
  if (it == by_label.end()) throw Error(Errc::MissingQueryResult, "no result '" + label + "'");
  return it->second;
}

const QueryResult* QueryResults::find(AggKind kind) const {
  for (const auto& label : order) {
    const auto& r = by_label.at(label);
    if (r.kind == kind) return &r;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Interpretation
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kDenseTempCells = std::size_t{1} << 20;

std::optional<std::size_t> cell_count(const std::vector<DimBounds>& bounds, std::size_t cap) {
  std::size_t cells = 1;
  for (const auto& b : bounds) {
    const Index e = std::max<Index>(b.extent(), 0);
    if (e != 0 && cells > cap / static_cast<std::size_t>(e)) return std::nullopt;
    cells *= static_cast<std::size_t>(e);
  }
  return cells;
}

struct CoordHash {
  std::size_t operator()(const Coord& k) const noexcept {
    std::size_t h = 0x9e3779b97f4a7c15ULL;
    for (Index v : k) h = (h ^ static_cast<std::size_t>(v)) * 0x100000001b3ULL;
    return h;
  }
};

class Cells {
 public:
  Cells(std::vector<DimBounds> bounds, bool dense, std::size_t cells)
      : bounds_(std::move(bounds)), dense_(dense) {
    if (dense_) data_.assign(cells, 0);
  }

  void update(ReduceOp op, std::span<const Index> c, Index v) {
    Index* cell = nullptr;
    if (dense_) {
      std::size_t f = 0;
      for (std::size_t d = 0; d < bounds_.size(); ++d) {
        if (!bounds_[d].contains(c[d])) {
          throw Error(Errc::CoordOutOfRange, "query target coordinate outside derived bounds");
        }
        f = f * static_cast<std::size_t>(bounds_[d].extent()) +
            static_cast<std::size_t>(c[d] - bounds_[d].lower);
      }
      cell = &data_[f];
    } else {
      cell = &map_[Coord(c.begin(), c.end())];
    }
    switch (op) {
      case ReduceOp::assign: *cell = v; break;
      case ReduceOp::add: *cell += v; break;
      case ReduceOp::max: *cell = std::max(*cell, v); break;
      case ReduceOp::bor: *cell |= v; break;
    }
  }

  template <class F>
  void for_each_nonzero(F&& f) const {
    if (!dense_) {
      for (const auto& [c, v] : map_) {
        if (v != 0) f(std::span<const Index>(c), v);
      }
      return;
    }
    Coord c(bounds_.size());
    for (std::size_t d = 0; d < c.size(); ++d) c[d] = bounds_[d].lower;
    for (std::size_t f_ = 0; f_ < data_.size(); ++f_) {
      if (data_[f_] != 0) f(std::span<const Index>(c), data_[f_]);
      for (std::size_t d = c.size(); d-- > 0;) {
        if (++c[d] <= bounds_[d].upper) break;
        c[d] = bounds_[d].lower;
      }
    }
  }

  std::size_t size() const { return dense_ ? data_.size() : map_.size(); }
  std::vector<Index>& dense_data() { return data_; }

 private:
  std::vector<DimBounds> bounds_;
  bool dense_;
  std::vector<Index> data_;
  std::unordered_map<Coord, Index, CoordHash> map_;
};

// One loop nest ready to run: driver binding, target and map chain.
struct Job {
  const Stmt* assign = nullptr;
  const Term* base = nullptr;
  std::vector<int> driver_slots;  // slot bound by each driver index
  std::vector<ExprPtr> target;
  std::vector<ExprPtr> maps;  // innermost first
  std::unique_ptr<CounterState> counters;
  std::unique_ptr<EvalContext> ctx;
  Coord target_buf;
};

class Interpreter {
 public:
  Interpreter(const QueryProgram& p, const ExecOptions& o) : p_(p), o_(o) {
    for (const auto& [name, decl] : p_.tensors) {
      if (decl.temporary) {
        const auto cells = cell_count(decl.bounds, kDenseTempCells);
        cells_.emplace(name, Cells(decl.bounds, cells.has_value(), cells.value_or(0)));
      } else {
        const auto cells = cell_count(decl.bounds, o_.result_cap);
        if (!cells) {
          throw Error(Errc::ExtentOverflow, "result '" + name + "' exceeds the cell cap");
        }
        cells_.emplace(name, Cells(decl.bounds, true, *cells));
      }
    }
  }

  QueryResults run(const std::function<void(std::vector<Job*>&)>& source_pass,
                   const std::function<void(Job&)>& width_pass) {
    std::vector<std::unique_ptr<Job>> jobs;
    std::vector<const Stmt*> order;
    for (const auto& s : p_.stmts) schedule(*s, jobs);
    std::vector<Job*> from_source;
    for (auto& j : jobs) {
      if (j->base->kind == Term::Kind::access && j->base->tensor == kSource) {
        from_source.push_back(j.get());
      }
    }
    if (!from_source.empty()) source_pass(from_source);
    // remaining nests in dependency order: widths and temporaries
    for (auto& j : jobs) {
      if (j->base->kind == Term::Kind::width) width_pass(*j);
    }
    for (auto& j : jobs) {
      if (j->base->kind == Term::Kind::access && j->base->tensor != kSource) run_temp(*j);
    }
    QueryResults out;
    for (std::size_t a = 0; a < p_.aggs.size(); ++a) {
      const AggPlan& ap = p_.aggs[a];
      QueryResult r;
      r.kind = ap.kind;
      r.bounds = ap.group_bounds;
      r.s = ap.s;
      r.t = ap.t;
      r.raw = std::move(cells_.at(ap.label).dense_data());
      out.trace.bytes += r.raw.size() * sizeof(Index);
      out.by_label.emplace(ap.label, std::move(r));
      out.order.push_back(ap.label);
    }
    out.trace += trace_;
    return out;
  }

  // Evaluate the map chain and write the target for a bound job.
  void apply(Job& j, Index base_value) {
    Index v = base_value;
    for (const auto& m : j.maps) {
      if (v == 0) return;
      v = j.ctx->eval(*m);
    }
    if (v == 0) return;
    for (std::size_t k = 0; k < j.target.size(); ++k) j.target_buf[k] = j.ctx->eval(*j.target[k]);
    cells_.at(j.assign->target).update(j.assign->op, j.target_buf, v);
  }

  QueryTrace& trace() { return trace_; }

 private:
  // Jobs are created so that producers precede their consumers.
  void schedule(const Stmt& s, std::vector<std::unique_ptr<Job>>& jobs) {
    if (s.kind == Stmt::Kind::where) {
      schedule(*s.producer, jobs);
      schedule(*s.consumer, jobs);
      return;
    }
    std::vector<std::string> vars;
    const Stmt* cur = &s;
    while (cur->kind == Stmt::Kind::forall) {
      vars.push_back(cur->var);
      cur = cur->body.get();
    }
    if (cur->kind != Stmt::Kind::assign) {
      throw Error(Errc::ValidationFailed, "nested where statements are not executable");
    }
    auto j = std::make_unique<Job>();
    j->assign = cur;
    const Term* t = cur->rhs.get();
    std::vector<const Term*> chain;
    while (t->kind == Term::Kind::map) {
      chain.push_back(t);
      t = t->inner.get();
    }
    if (t->kind == Term::Kind::constant) {
      throw Error(Errc::ValidationFailed, "loop nest without an iterated operand");
    }
    j->base = t;
    std::map<std::string, int> slots;
    for (std::size_t k = 0; k < vars.size(); ++k) slots[vars[k]] = static_cast<int>(k);
    for (const auto& idx : t->indices) {
      if (idx->op != ExprOp::var || !slots.count(idx->name)) {
        throw Error(Errc::ValidationFailed, "iterated operand must be indexed by loop variables");
      }
      j->driver_slots.push_back(slots.at(idx->name));
    }
    int next = static_cast<int>(vars.size());
    for (const auto& e : cur->target_indices) j->target.push_back(resolve_slots(e, slots, next));
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      j->maps.push_back(resolve_slots((*it)->value, slots, next));
    }
    j->target_buf.assign(j->target.size(), 0);
    bool counters = false;
    for (const auto& e : j->target) counters = counters || has_counter(*e);
    for (const auto& e : j->maps) counters = counters || has_counter(*e);
    if (counters) {
      if (t->kind != Term::Kind::access || t->tensor != kSource) {
        throw Error(Errc::ValidationFailed, "counters are only defined while iterating the source");
      }
      std::vector<CounterMode> modes = o_.counter_modes;
      modes.resize(p_.counters.size(), CounterMode::keyed_table);
      j->counters = std::make_unique<CounterState>(modes);
    }
    std::map<std::string, int> key_slots;
    for (const auto& v : p_.source_vars) {
      if (slots.count(v)) key_slots[v] = slots.at(v);
    }
    j->ctx = std::make_unique<EvalContext>(static_cast<std::size_t>(next),
                                           counters ? &p_.counters : nullptr, j->counters.get(),
                                           key_slots);
    jobs.push_back(std::move(j));
  }

  void run_temp(Job& j) {
    const Cells& src = cells_.at(j.base->tensor);
    trace_.bytes += src.size() * sizeof(Index);
    src.for_each_nonzero([&](std::span<const Index> c, Index v) {
      auto slots = j.ctx->slots();
      for (std::size_t k = 0; k < j.driver_slots.size(); ++k) slots[j.driver_slots[k]] = c[k];
      apply(j, v);
    });
  }

  const QueryProgram& p_;
  const ExecOptions& o_;
  std::map<std::string, Cells> cells_;
  QueryTrace trace_;
};

}  // namespace

QueryResults execute_query(const QueryProgram& p, const TensorStorage& src,
                           const ExecOptions& opts) {
  if (src.order() != p.source_vars.size()) {
    throw Error(Errc::OrderMismatch, "query source order does not match tensor order");
  }
  Interpreter in(p, opts);
  const auto source_pass = [&](std::vector<Job*>& jobs) {
    Coord c(src.order());
    std::uint64_t visits = 0;
    walk_leaves(src, [&](std::span<const Index> lc, Index, double v) {
      ++visits;
      if (v == 0.0) return;
      project(src, lc, c);
      for (Job* j : jobs) {
        auto slots = j->ctx->slots();
        for (std::size_t k = 0; k < j->driver_slots.size(); ++k) slots[j->driver_slots[k]] = c[k];
        j->ctx->begin_nonzero();
        in.apply(*j, 1);
      }
    });
    in.trace().passes += 1;
    in.trace().visits += visits;
    in.trace().bytes += visits * (src.levels.size() + 1) * sizeof(Index);
  };
  const auto width_pass = [&](Job& j) {
    const std::size_t depth = j.base->depth;
    if (depth >= src.levels.size()) throw Error(Errc::ValidationFailed, "width below the leaves");
    const LevelStorage& L = src.levels[depth];
    std::uint64_t positions = 0;
    walk_levels(src, depth, [&](std::span<const Index> lc, Index parent) {
      ++positions;
      Index w = 0;
      const auto pp = static_cast<std::size_t>(parent);
      if (L.kind == LevelKind::compressed) w = L.pos[pp + 1] - L.pos[pp];
      else if (L.kind == LevelKind::singleton) w = L.crd[pp] != -1 ? 1 : 0;
      else throw Error(Errc::ValidationFailed, "width needs a compressed or singleton level");
      auto slots = j.ctx->slots();
      for (std::size_t k = 0; k < j.driver_slots.size(); ++k) slots[j.driver_slots[k]] = lc[k];
      in.apply(j, w);
    });
    in.trace().bytes += positions * 2 * sizeof(Index);
  };
  return in.run(source_pass, width_pass);
}

QueryResults execute_query(const QueryProgram& p, const RemappedBuffer& src,
                           const ExecOptions& opts) {
  if (src.arity != p.source_vars.size()) {
    throw Error(Errc::OrderMismatch, "query source arity does not match buffer arity");
  }
  Interpreter in(p, opts);
  const auto source_pass = [&](std::vector<Job*>& jobs) {
    for (std::size_t n = 0; n < src.size(); ++n) {
      if (src.values[n] == 0.0) continue;
      const auto c = src.at(n);
      for (Job* j : jobs) {
        auto slots = j->ctx->slots();
        for (std::size_t k = 0; k < j->driver_slots.size(); ++k) slots[j->driver_slots[k]] = c[k];
        j->ctx->begin_nonzero();
        in.apply(*j, 1);
      }
    }
    in.trace().passes += 1;
    in.trace().visits += src.size();
    in.trace().bytes += src.size() * (src.arity + 1) * sizeof(Index);
  };
  const auto width_pass = [](Job&) {
    throw Error(Errc::ValidationFailed, "a remapped buffer has no level widths");
  };
  return in.run(source_pass, width_pass);
}

}  // namespace tmorph
