#include "checks.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/format.hpp"
#include "tensormorph/level.hpp"
#include "tensormorph/query.hpp"
#include "tensormorph/remap.hpp"

namespace tmorph::checks {

namespace {

Index uniform(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

double nonzero_value(Rng& rng) {
  // multiples of 1/8 keep sums exact
  Index v = 0;
  while (v == 0) v = uniform(rng, -80, 80);
  return static_cast<double>(v) / 8.0;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

CanonicalTensor random_matrix(Rng& rng, Index rows, Index cols, double density) {
  std::bernoulli_distribution keep(density);
  std::vector<Entry> e;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (keep(rng)) e.push_back({{i, j}, nonzero_value(rng)});
    }
  }
  return CanonicalTensor({rows, cols}, std::move(e));
}

CanonicalTensor banded_matrix(Rng& rng, Index n, Index bandwidth, double fill) {
  std::bernoulli_distribution keep(fill);
  std::vector<Entry> e;
  for (Index i = 0; i < n; ++i) {
    for (Index j = std::max<Index>(0, i - bandwidth); j <= std::min(n - 1, i + bandwidth); ++j) {
      if (keep(rng)) e.push_back({{i, j}, nonzero_value(rng)});
    }
  }
  return CanonicalTensor({n, n}, std::move(e));
}

CanonicalTensor row_balanced_matrix(Rng& rng, Index rows, Index cols, Index k) {
  std::vector<Entry> e;
  std::vector<Index> all(static_cast<std::size_t>(cols));
  std::iota(all.begin(), all.end(), 0);
  for (Index i = 0; i < rows; ++i) {
    const Index n = std::min(cols, uniform(rng, 0, k));
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<Index> picked(all.begin(), all.begin() + n);
    std::sort(picked.begin(), picked.end());
    for (Index j : picked) e.push_back({{i, j}, nonzero_value(rng)});
  }
  return CanonicalTensor({rows, cols}, std::move(e));
}

std::vector<CanonicalTensor> conversion_corpus(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<CanonicalTensor> out;
  std::uniform_real_distribution<double> dens(0.01, 0.30);
  for (std::size_t n = 0; n < count; ++n) {
    switch (n % 3) {
      case 0:
        out.push_back(random_matrix(rng, uniform(rng, 1, 64), uniform(rng, 1, 64), dens(rng)));
        break;
      case 1:
        out.push_back(banded_matrix(rng, uniform(rng, 1, 256), uniform(rng, 0, 5)));
        break;
      default:
        out.push_back(
            row_balanced_matrix(rng, uniform(rng, 1, 64), uniform(rng, 1, 64), uniform(rng, 1, 8)));
    }
  }
  return out;
}

CanonicalTensor diagonals(Index n, std::span<const Index> offsets) {
  std::vector<Entry> e;
  std::vector<Index> sorted(offsets.begin(), offsets.end());
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < n; ++i) {
    for (Index d : sorted) {
      const Index j = i + d;
      if (j >= 0 && j < n) e.push_back({{i, j}, static_cast<double>(1 + (i + j) % 7)});
    }
  }
  return CanonicalTensor({n, n}, std::move(e));
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

bool dense_equal(const CanonicalTensor& a, const CanonicalTensor& b) {
  if (a.dims() != b.dims() || a.order() != 2) return false;
  const std::size_t rows = static_cast<std::size_t>(a.dims()[0]);
  const std::size_t cols = static_cast<std::size_t>(a.dims()[1]);
  std::vector<double> ga(rows * cols, 0.0), gb(rows * cols, 0.0);
  for (const auto& e : a.entries()) ga[e.coord[0] * cols + e.coord[1]] += e.value;
  for (const auto& e : b.entries()) gb[e.coord[0] * cols + e.coord[1]] += e.value;
  return ga == gb;
}

std::string interleave_string(std::span<const Index> coords, int bits) {
  std::string s;
  for (int b = bits - 1; b >= 0; --b) {
    for (std::size_t d = coords.size(); d-- > 0;) s += ((coords[d] >> b) & 1) ? '1' : '0';
  }
  return s;
}

std::vector<Index> prefix_pos(std::span<const Index> counts) {
  std::vector<Index> pos(counts.size() + 1, 0);
  for (std::size_t p = 0; p < counts.size(); ++p) pos[p + 1] = pos[p] + counts[p];
  return pos;
}

// ---------------------------------------------------------------------------
// 1 / 6: conversion sweep
// ---------------------------------------------------------------------------

namespace {

struct Sweep {
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::size_t violations = 0;
  double seconds = 0;
  std::string first_failure;
};

const Sweep& conversion_sweep(const SuiteOptions& o) {
  static std::map<std::pair<std::uint64_t, std::size_t>, Sweep> cache;
  auto key = std::make_pair(o.seed, o.corpus);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Sweep s;
  const auto t0 = Clock::now();
  const auto corpus = conversion_corpus(o.seed, o.corpus);
  const auto& names = builtin_names();
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    for (const auto& from : names) {
      ProtocolLog log;
      TensorStorage src;
      try {
        src = convert(coo_storage(corpus[m]), from, {}, &log).tensor;
      } catch (const std::exception& e) {
        ++s.failures;
        if (s.first_failure.empty()) s.first_failure = "matrix " + std::to_string(m) + " coo->" + from + ": " + e.what();
        continue;
      }
      for (const auto& to : names) {
        if (to == from) continue;
        ++s.cases;
        try {
          const auto out = to_canonical(convert(src, to, {}, &log).tensor);
          const bool ok = equal_multiset(out, corpus[m], ZeroPolicy::ignore_explicit_zeros) &&
                          dense_equal(out, corpus[m]);
          if (!ok) {
            ++s.failures;
            if (s.first_failure.empty()) s.first_failure = "matrix " + std::to_string(m) + " " + from + "->" + to;
          }
        } catch (const std::exception& e) {
          ++s.failures;
          if (s.first_failure.empty()) s.first_failure = "matrix " + std::to_string(m) + " " + from + "->" + to + ": " + e.what();
        }
      }
      s.violations += log.count();
    }
  }
  s.seconds = seconds_since(t0);
  return cache.emplace(key, std::move(s)).first->second;
}

}  // namespace

CheckResult check_conversions(const SuiteOptions& o) {
  const Sweep& s = conversion_sweep(o);
  CheckResult r{"oracle equivalence", false, {}};
  r.passed = s.failures == 0 && s.cases == o.corpus * 42 && s.seconds < 60.0;
  r.detail = std::to_string(s.cases - s.failures) + "/" + std::to_string(s.cases) +
             " conversions match, " + fmt(s.seconds) + " s (limit 60 s)";
  if (!s.first_failure.empty()) r.detail += "; first failure: " + s.first_failure;
  return r;
}

// ---------------------------------------------------------------------------
// 2: attribute queries against a brute-force oracle
// ---------------------------------------------------------------------------

namespace {

using Tuples = std::vector<Coord>;

struct QueryCase {
  std::string text;
  std::vector<std::size_t> group;
  AggKind kind;
  std::vector<std::size_t> args;
};

struct RemapCase {
  std::string text;
  std::function<Tuples(const CanonicalTensor&)> oracle;
  std::vector<QueryCase> queries;
};

Index oracle_morton(std::span<const Index> c, int bits) {
  const std::string s = interleave_string(c, bits);
  Index v = 0;
  for (char ch : s) v = (v << 1) | (ch == '1' ? 1 : 0);
  return v;
}

std::vector<RemapCase> remap_cases() {
  using K = AggKind;
  const auto map_each = [](auto f) {
    return [f](const CanonicalTensor& t) {
      Tuples out;
      for (const auto& e : t.entries()) out.push_back(f(e.coord[0], e.coord[1]));
      return out;
    };
  };
  std::vector<RemapCase> cases;
  cases.push_back({"(i,j) -> (i,j)", map_each([](Index i, Index j) { return Coord{i, j}; }),
                   {{"select [i] -> count(j) as nnz", {0}, K::count, {1}},
                    {"select [] -> count(i,j) as n", {}, K::count, {0, 1}},
                    {"select [] -> count(i) as rows", {}, K::count, {0}},
                    {"select [i] -> max(j) as hi", {0}, K::max, {1}},
                    {"select [i] -> min(j) as lo", {0}, K::min, {1}},
                    {"select [i] -> id() as ne", {0}, K::id, {}},
                    {"select [] -> max(i) as top", {}, K::max, {0}},
                    {"select [] -> min(j) as left", {}, K::min, {1}}}});
  cases.push_back({"(i,j) -> (j,i)", map_each([](Index i, Index j) { return Coord{j, i}; }),
                   {{"select [j] -> count(i) as nnz", {0}, K::count, {1}},
                    {"select [j] -> id() as ne", {0}, K::id, {}},
                    {"select [j] -> min(i) as lo", {0}, K::min, {1}},
                    {"select [] -> max(j) as right", {}, K::max, {0}}}});
  cases.push_back({"(i,j) -> (j-i,i,j)", map_each([](Index i, Index j) { return Coord{j - i, i, j}; }),
                   {{"select [k] -> id() as ne", {0}, K::id, {}},
                    {"select [k] -> count(i) as len", {0}, K::count, {1}},
                    {"select [] -> min(k) as lo", {}, K::min, {0}},
                    {"select [] -> max(k) as hi", {}, K::max, {0}},
                    {"select [k] -> max(i) as last", {0}, K::max, {1}}}});
  cases.push_back({"(i,j) -> (i+j,i,j)", map_each([](Index i, Index j) { return Coord{i + j, i, j}; }),
                   {{"select [s] -> count(i) as n", {0}, K::count, {1}},
                    {"select [s] -> min(i) as lo", {0}, K::min, {1}},
                    {"select [s] -> id() as ne", {0}, K::id, {}}}});
  cases.push_back({"(i,j) -> (i/2,j/2,i,j)",
                   map_each([](Index i, Index j) { return Coord{i / 2, j / 2, i, j}; }),
                   {{"select [bi] -> count(bj) as nnz", {0}, K::count, {1}},
                    {"select [bi,bj] -> count(i,j) as fill", {0, 1}, K::count, {2, 3}},
                    {"select [bi,bj] -> id() as ne", {0, 1}, K::id, {}},
                    {"select [] -> max(bi) as top", {}, K::max, {0}},
                    {"select [bi] -> min(bj) as lo", {0}, K::min, {1}}}});
  cases.push_back({"(i,j) -> (k=#i in k,i,j)",
                   [](const CanonicalTensor& t) {
                     Tuples out;
                     std::map<Index, Index> seen;
                     for (const auto& e : t.entries()) {
                       out.push_back({seen[e.coord[0]]++, e.coord[0], e.coord[1]});
                     }
                     return out;
                   },
                   {{"select [] -> max(k) as max_k", {}, K::max, {0}},
                    {"select [k] -> count(i) as rows", {0}, K::count, {1}},
                    {"select [k] -> min(i) as first", {0}, K::min, {1}},
                    {"select [] -> count(k) as width", {}, K::count, {0}}}});
  cases.push_back({"(i,j) -> (morton(i,j),i,j)",
                   map_each([](Index i, Index j) {
                     const Index c[2] = {i, j};
                     return Coord{oracle_morton(c, 31), i, j};
                   }),
                   {{"select [] -> max(m) as hi", {}, K::max, {0}},
                    {"select [] -> count(m) as n", {}, K::count, {0}},
                    {"select [] -> min(m) as lo", {}, K::min, {0}}}});
  return cases;
}

// One group cell of the oracle.
struct OracleCell {
  std::set<Coord> distinct;
  std::optional<Index> lo, hi;
  bool any = false;
};

std::string compare_with_oracle(const QueryResult& r, const QueryCase& qc, const Tuples& tuples) {
  std::map<Coord, OracleCell> cells;
  for (const auto& t : tuples) {
    Coord g;
    for (std::size_t d : qc.group) g.push_back(t[d]);
    OracleCell& c = cells[g];
    c.any = true;
    Coord a;
    for (std::size_t d : qc.args) a.push_back(t[d]);
    c.distinct.insert(a);
    if (!qc.args.empty()) {
      const Index v = t[qc.args[0]];
      c.lo = c.lo ? std::min(*c.lo, v) : v;
      c.hi = c.hi ? std::max(*c.hi, v) : v;
    }
  }
  if (r.bounds.size() != qc.group.size()) return "result has wrong arity";
  for (const auto& [g, c] : cells) {
    for (std::size_t d = 0; d < g.size(); ++d) {
      if (!r.bounds[d].contains(g[d])) return "group key outside result bounds";
    }
  }
  // every cell of the result, including empty groups
  Coord g(r.bounds.size());
  for (std::size_t d = 0; d < g.size(); ++d) {
    if (r.bounds[d].extent() <= 0) return "";
    g[d] = r.bounds[d].lower;
  }
  static const OracleCell empty;
  while (true) {
    auto it = cells.find(g);
    const OracleCell& c = it == cells.end() ? empty : it->second;
    std::optional<Index> want, got;
    switch (qc.kind) {
      case AggKind::count:
        want = static_cast<Index>(c.distinct.size());
        got = r.raw_at(g);
        break;
      case AggKind::id:
        want = c.any ? 1 : 0;
        got = r.raw_at(g);
        break;
      case AggKind::max:
        want = c.hi;
        got = r.value_at(g);
        break;
      case AggKind::min:
        want = c.lo;
        got = r.value_at(g);
        break;
    }
    if (want != got) {
      std::string at;
      for (Index v : g) at += (at.empty() ? "" : ",") + std::to_string(v);
      return "cell [" + at + "] expected " + (want ? std::to_string(*want) : "empty") + ", got " +
             (got ? std::to_string(*got) : "empty");
    }
    std::size_t d = g.size();
    while (d > 0) {
      --d;
      if (++g[d] <= r.bounds[d].upper) break;
      g[d] = r.bounds[d].lower;
      if (d == 0) return "";
    }
    if (g.empty()) return "";
  }
}

QueryResults run_query(const std::string& remap_text, const std::string& query_text,
                       const TensorStorage& src, bool optimized) {
  const RemapProgram prog = parse_remap(remap_text).bind({});
  const Query q = parse_query(query_text, prog.dim_names());
  std::vector<DimBounds> bounds;
  for (Index d : src.dims) bounds.push_back({0, d - 1});
  const SourceProfile profile = profile_of(src);
  QueryProgram p = lower_to_canonical(q, prog, bounds);
  if (optimized) p = optimize(p, profile);
  std::vector<std::string> grouped;
  for (int cv : profile.grouped_prefix()) grouped.push_back(prog.src_vars()[static_cast<std::size_t>(cv)]);
  ExecOptions eo;
  for (const auto& c : prog.counters()) eo.counter_modes.push_back(choose_counter_mode(c, grouped));
  return execute_query(p, src, eo);
}

}  // namespace

CheckResult check_queries(const SuiteOptions& o) {
  CheckResult r{"query oracle", false, {}};
  Rng rng(o.seed + 2);
  const auto cases = remap_cases();
  const auto& names = builtin_names();
  std::size_t passed = 0;
  std::string failure;
  std::uniform_real_distribution<double> dens(0.02, 0.4);
  for (std::size_t n = 0; n < o.queries; ++n) {
    const RemapCase& rc = cases[static_cast<std::size_t>(uniform(rng, 0, Index(cases.size()) - 1))];
    const QueryCase& qc = rc.queries[static_cast<std::size_t>(uniform(rng, 0, Index(rc.queries.size()) - 1))];
    const auto m = random_matrix(rng, uniform(rng, 1, 32), uniform(rng, 1, 32), dens(rng));
    const std::string& fmt_name = names[static_cast<std::size_t>(uniform(rng, 0, Index(names.size()) - 1))];
    std::string why;
    try {
      const TensorStorage src = from_canonical(m, fmt_name);
      const Tuples tuples = rc.oracle(m);
      for (bool optimized : {false, true}) {
        const QueryResults res = run_query(rc.text, qc.text, src, optimized);
        why = compare_with_oracle(res.by_label.begin()->second, qc, tuples);
        if (!why.empty()) {
          why = (optimized ? "optimized: " : "canonical: ") + why;
          break;
        }
      }
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (why.empty()) {
      ++passed;
    } else if (failure.empty()) {
      failure = rc.text + " | " + qc.text + " on " + fmt_name + ": " + why;
    }
  }

  // anchors
  bool anchors = true;
  try {
    std::vector<Entry> e = {{{0, 0}, 1}, {{1, 5}, 2}, {{3, 1}, 3}, {{3, 2}, 4}, {{3, 4}, 5}, {{4, 3}, 6}};
    const auto src = from_canonical(CanonicalTensor({5, 6}, e), "csr");
    const auto q = run_query("(i,j) -> (i,j)", "select [i] -> min(j) as minir, max(j) as maxir", src, true);
    const Index row[1] = {3};
    anchors = anchors && q.at("minir").value_at(row) == 1 && q.at("maxir").value_at(row) == 4;

    std::vector<Entry> f = {{{0, 0}, 1}, {{1, 2}, 2}, {{2, 4}, 3}, {{3, 1}, 4}};
    const auto src2 = from_canonical(CanonicalTensor({4, 6}, f), "coo");
    const auto q2 = run_query("(i,j) -> (j,i)", "select [j] -> id() as ne", src2, true);
    const Index col[1] = {5};
    anchors = anchors && q2.at("ne").raw_at(col) == 0;
  } catch (const std::exception& e) {
    anchors = false;
    if (failure.empty()) failure = std::string("anchor: ") + e.what();
  }

  r.passed = passed == o.queries && anchors;
  r.detail = std::to_string(passed) + "/" + std::to_string(o.queries) +
             " triples exact, anchors " + (anchors ? "ok" : "FAILED");
  if (!failure.empty()) r.detail += "; first failure: " + failure;
  return r;
}

// ---------------------------------------------------------------------------
// 3: width rewrite removes nonzero visits
// ---------------------------------------------------------------------------

CheckResult check_rewrites(const SuiteOptions& o) {
  CheckResult r{"rewrite evidence", false, {}};
  Rng rng(o.seed + 3);
  const auto m = random_matrix(rng, 48, 40, 0.2);
  const auto nnz = static_cast<std::uint64_t>(m.nnz());
  const auto csr = from_canonical(m, "csr");
  const auto coo = from_canonical(m, "coo");
  const std::string q = "select [i] -> count(j) as nnz";
  const auto on_csr = run_query("(i,j) -> (i,j)", q, csr, true);
  const auto on_coo = run_query("(i,j) -> (i,j)", q, coo, true);
  const Tuples tuples = remap_cases()[0].oracle(m);
  const QueryCase qc{q, {0}, AggKind::count, {1}};
  const bool values_ok = compare_with_oracle(on_csr.at("nnz"), qc, tuples).empty() &&
                         compare_with_oracle(on_coo.at("nnz"), qc, tuples).empty();
  // same evidence through the conversion engine's analysis phase
  const PhaseTrace csr_trace = convert(csr, "csr").trace;
  const PhaseTrace coo_trace = convert(coo, "csr").trace;
  const auto via_csr = csr_trace.find("analysis");
  const auto via_coo = coo_trace.find("analysis");
  const std::uint64_t engine_csr = via_csr ? via_csr->visits : ~0ull;
  const std::uint64_t engine_coo = via_coo ? via_coo->visits : ~0ull;
  r.passed = values_ok && on_csr.trace.visits == 0 && on_coo.trace.visits == nnz &&
             engine_csr == 0 && engine_coo == nnz;
  r.detail = "csr visits " + std::to_string(on_csr.trace.visits) + " (engine " +
             std::to_string(engine_csr) + "), coo visits " + std::to_string(on_coo.trace.visits) +
             " (engine " + std::to_string(engine_coo) + "), nnz " + std::to_string(nnz) +
             (values_ok ? "" : ", counts WRONG");
  return r;
}

// ---------------------------------------------------------------------------
// 4: counters
// ---------------------------------------------------------------------------

CheckResult check_counters(const SuiteOptions& o) {
  CheckResult r{"counter semantics", false, {}};
  Rng rng(o.seed + 4);
  const RemapProgram ell = parse_remap("(i,j) -> (k=#i in k,i,j)").bind({});
  std::size_t passed = 0;
  std::string failure;
  std::uniform_real_distribution<double> dens(0.02, 0.5);
  for (std::size_t n = 0; n < o.counter_cases; ++n) {
    const auto m = random_matrix(rng, uniform(rng, 1, 64), uniform(rng, 1, 64), dens(rng));
    std::vector<Coord> grouped;
    for (const auto& e : m.entries()) grouped.push_back(e.coord);
    std::vector<Coord> shuffled = grouped;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    const auto run = [&](CounterMode mode, const std::vector<Coord>& order) {
      CounterState state({mode});
      RemapEvaluator ev(ell, state);
      std::vector<Index> ks;
      for (const auto& c : order) ks.push_back(ev.eval(c)[0]);
      return ks;
    };
    const auto ordinals_ok = [&](const std::vector<Coord>& order, const std::vector<Index>& ks) {
      std::map<Index, std::vector<Index>> per_row;
      for (std::size_t k = 0; k < order.size(); ++k) per_row[order[k][0]].push_back(ks[k]);
      for (auto& [row, v] : per_row) {
        std::sort(v.begin(), v.end());
        for (std::size_t k = 0; k < v.size(); ++k) {
          if (v[k] != static_cast<Index>(k)) return false;
        }
      }
      return true;
    };
    std::string why;
    try {
      const auto keyed = run(CounterMode::keyed_table, grouped);
      const auto scalar = run(CounterMode::scalar_reuse, grouped);
      const auto keyed_shuffled = run(CounterMode::keyed_table, shuffled);
      if (!ordinals_ok(grouped, keyed)) why = "keyed_table ordinals";
      else if (!ordinals_ok(grouped, scalar)) why = "scalar_reuse ordinals";
      else if (keyed != scalar) why = "modes disagree on row-grouped input";
      else if (!ordinals_ok(shuffled, keyed_shuffled)) why = "keyed_table ordinals on shuffled input";
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (why.empty()) ++passed;
    else if (failure.empty()) failure = "matrix " + std::to_string(n) + ": " + why;
  }
  r.passed = passed == o.counter_cases;
  r.detail = std::to_string(passed) + "/" + std::to_string(o.counter_cases) + " matrices";
  if (!failure.empty()) r.detail += "; first failure: " + failure;
  return r;
}

// ---------------------------------------------------------------------------
// 5: direct vs via
// ---------------------------------------------------------------------------

double median_ms(std::size_t repeats, const std::function<void()>& fn) {
  std::vector<double> ms;
  for (std::size_t k = 0; k < std::max<std::size_t>(repeats, 1); ++k) {
    const auto t0 = Clock::now();
    fn();
    ms.push_back(seconds_since(t0) * 1e3);
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  return n % 2 ? ms[n / 2] : (ms[n / 2 - 1] + ms[n / 2]) / 2.0;
}

CheckResult check_direct_vs_via(const SuiteOptions& o) {
  CheckResult r{"direct vs via", false, {}};
  const auto t0 = Clock::now();
  const Index offsets[] = {-3, -2, -1, 0, 1, 2, 3};
  const auto m = diagonals(o.bench_n, offsets);
  const auto coo = coo_storage(m);
  const auto direct = convert(coo, "dia");
  const auto via = convert_via(coo, "csr", "dia");
  const bool same = to_canonical(direct.tensor) == m && to_canonical(via.tensor) == m;
  std::vector<double> dms, vms;
  for (std::size_t k = 0; k < o.bench_repeats; ++k) {
    dms.push_back(median_ms(1, [&] { (void)convert(coo, "dia"); }));
    vms.push_back(median_ms(1, [&] { (void)convert_via(coo, "csr", "dia"); }));
  }
  const auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
  };
  const double d = med(dms), v = med(vms);
  const auto dv = direct.trace.total_visits(), vv = via.trace.total_visits();
  const double secs = seconds_since(t0);
  r.passed = same && d <= v * o.bench_slack && dv < vv && secs < 30.0;
  r.detail = "direct " + fmt(d, 3) + " ms vs via csr " + fmt(v, 3) + " ms (allowance " +
             fmt((o.bench_slack - 1.0) * 100.0, 0) + "%), visits " + std::to_string(dv) + " < " +
             std::to_string(vv) + ", " + fmt(secs) + " s" + (same ? "" : ", results DIFFER");
  return r;
}

// ---------------------------------------------------------------------------
// 6: protocol conformance
// ---------------------------------------------------------------------------

CheckResult check_protocol(const SuiteOptions& o) {
  CheckResult r{"protocol conformance", false, {}};
  const Sweep& s = conversion_sweep(o);
  Rng rng(o.seed + 6);
  std::size_t agree = 0;
  std::string failure;
  for (std::size_t n = 0; n < o.count_vectors; ++n) {
    std::vector<Index> counts(static_cast<std::size_t>(uniform(rng, 0, 200)));
    for (Index& c : counts) c = uniform(rng, 0, 10);
    const auto sz = static_cast<Index>(counts.size());
    ProtocolLog log;
    const auto build = [&](bool sequenced) {
      LevelStorage L;
      L.kind = LevelKind::compressed;
      auto f = make_level_format(L, LevelContext{0, {0, 10}, nullptr, &log});
      std::vector<Index> order(counts.size());
      std::iota(order.begin(), order.end(), 0);
      if (sequenced) {
        f->seq_init_edges(sz);
        for (Index p : order) f->seq_insert_edges(p, counts[static_cast<std::size_t>(p)]);
      } else {
        std::shuffle(order.begin(), order.end(), rng);
        f->unseq_init_edges(sz);
        for (Index p : order) f->unseq_insert_edges(p, counts[static_cast<std::size_t>(p)]);
        f->unseq_finalize_edges();
      }
      f->init_coords(sz);
      return L.pos;
    };
    std::string why;
    try {
      const auto seq = build(true);
      const auto unseq = build(false);
      if (seq != unseq) why = "sequenced and unsequenced pos differ";
      else if (seq != prefix_pos(counts)) why = "pos differs from prefix sums";
      else if (log.count()) why = log.violations().front();
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (why.empty()) ++agree;
    else if (failure.empty()) failure = "vector " + std::to_string(n) + ": " + why;
  }
  r.passed = s.violations == 0 && s.failures == 0 && agree == o.count_vectors;
  r.detail = std::to_string(s.violations) + " violations over " + std::to_string(s.cases) +
             " conversions, " + std::to_string(agree) + "/" + std::to_string(o.count_vectors) +
             " count vectors agree";
  if (!failure.empty()) r.detail += "; first failure: " + failure;
  return r;
}

// ---------------------------------------------------------------------------
// 7: Morton order
// ---------------------------------------------------------------------------

CheckResult check_morton(const SuiteOptions&) {
  CheckResult r{"morton order", false, {}};
  struct Variant {
    const char* text;
    Index block;
  };
  const Variant variants[] = {{"(i,j,k) -> (morton(i,j,k),i,j,k)", 1},
                              {"(i,j,k) -> (morton(i/4,j/4,k/4),i/4,j/4,k/4,i,j,k)", 4}};
  std::size_t ok = 0;
  std::string failure;
  for (const auto& v : variants) {
    const RemapProgram prog = parse_remap(v.text).bind({});
    CounterState state;
    RemapEvaluator ev(prog, state);
    std::vector<Coord> pts;
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 16; ++j)
        for (Index k = 0; k < 16; ++k) pts.push_back({i, j, k});
    std::vector<Index> codes;
    std::vector<std::string> strings;
    for (const auto& p : pts) {
      codes.push_back(ev.eval(p)[0]);
      const Coord b = {p[0] / v.block, p[1] / v.block, p[2] / v.block};
      strings.push_back(interleave_string(b, 21));
    }
    std::vector<std::size_t> by_code(pts.size()), by_string(pts.size());
    std::iota(by_code.begin(), by_code.end(), 0);
    std::iota(by_string.begin(), by_string.end(), 0);
    std::stable_sort(by_code.begin(), by_code.end(),
                     [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
    std::stable_sort(by_string.begin(), by_string.end(),
                     [&](std::size_t a, std::size_t b) { return strings[a] < strings[b]; });
    if (by_code == by_string) ++ok;
    else if (failure.empty()) failure = v.text;
  }
  r.passed = ok == std::size(variants);
  r.detail = std::to_string(ok) + "/" + std::to_string(std::size(variants)) +
             " remaps sort like the bit-interleave oracle over [0,16)^3";
  if (!failure.empty()) r.detail += "; mismatch: " + failure;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<NumberedCheck> all_checks(bool include_bench) {
  std::vector<NumberedCheck> c = {{1, check_conversions}, {2, check_queries},
                                  {3, check_rewrites},    {4, check_counters}};
  if (include_bench) c.push_back({5, check_direct_vs_via});
  c.push_back({6, check_protocol});
  c.push_back({7, check_morton});
  return c;
}

int run_checks(const std::vector<NumberedCheck>& checks, const SuiteOptions& o, std::ostream& out) {
  int failures = 0;
  for (const auto& c : checks) {
    CheckResult r;
    try {
      r = c.run(o);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("threw ") + e.what();
    }
    if (!r.passed) ++failures;
    out << (r.passed ? "[PASS] " : "[FAIL] ") << c.id << " " << r.name << ": " << r.detail << "\n";
    out.flush();
  }
  return failures;
}

}  // namespace tmorph::checks
