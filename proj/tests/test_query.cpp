#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>
#include <set>

#include "checks.hpp"
#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/query.hpp"

using namespace tmorph;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

std::vector<DimBounds> ranges(std::span<const Index> dims) {
  std::vector<DimBounds> b;
  for (Index d : dims) b.push_back({0, d - 1});
  return b;
}

struct Run {
  QueryProgram canonical;
  QueryProgram optimized;
  QueryResults results;
};

Run run(const std::string& remap, const std::string& query, const TensorStorage& src,
        bool optimize_first = true) {
  const RemapProgram p = parse_remap(remap).bind({});
  Run r;
  r.canonical = lower_to_canonical(parse_query(query, p.dim_names()), p, ranges(src.dims));
  r.optimized = optimize(r.canonical, profile_of(src));
  r.results = execute_query(optimize_first ? r.optimized : r.canonical, src);
  return r;
}

std::string stmt(const QueryProgram& p, std::size_t k = 0) { return render(*p.stmts.at(k)); }

CanonicalTensor example() {
  // 4x6 with nonzeros on diagonal offsets -3, 0 and 2
  return canonicalize({{{3, 0}, 1}, {{0, 0}, 2}, {{2, 2}, 3}, {{1, 3}, 4}, {{0, 2}, 5}}, {4, 6});
}

}  // namespace

TEST(ParseQuery, Forms) {
  auto a = parse_query("select [i] -> count(j) as nnz_per_row");
  EXPECT_EQ(a.group_vars, (std::vector<std::string>{"i"}));
  ASSERT_EQ(a.aggs.size(), 1u);
  EXPECT_EQ(a.aggs[0].kind, AggKind::count);
  EXPECT_EQ(a.aggs[0].args, (std::vector<std::string>{"j"}));
  EXPECT_EQ(a.aggs[0].label, "nnz_per_row");

  auto b = parse_query("select [] -> min(k) as lb, max(k) as ub");
  EXPECT_TRUE(b.group_vars.empty());
  ASSERT_EQ(b.aggs.size(), 2u);
  EXPECT_EQ(b.aggs[0].kind, AggKind::min);
  EXPECT_EQ(b.aggs[1].kind, AggKind::max);

  auto c = parse_query("select [k] -> id() as ne");
  EXPECT_EQ(c.aggs[0].kind, AggKind::id);
  EXPECT_TRUE(c.aggs[0].args.empty());
  EXPECT_EQ(to_string(c), "select [k] -> id() as ne");
  EXPECT_EQ(to_string(parse_query(to_string(b))), to_string(b));
}

TEST(ParseQuery, Errors) {
  EXPECT_EQ(code_of([] { parse_query("select [i] count(j) as n"); }), Errc::SyntaxError);
  EXPECT_EQ(code_of([] { parse_query("select [i] -> max(j,k) as n"); }), Errc::SyntaxError);
  EXPECT_EQ(code_of([] { parse_query("select [i] -> id(j) as n"); }), Errc::SyntaxError);
  EXPECT_EQ(code_of([] { parse_query("select [i] -> sum(j) as n"); }), Errc::SyntaxError);
  const std::string ij[] = {"i", "j"};
  EXPECT_EQ(code_of([&] { parse_query("select [i] -> count(q) as n", ij); }), Errc::UnknownVar);
  const std::string kij[] = {"k", "i", "j"};
  EXPECT_EQ(code_of([&] { parse_query("select [] -> count(k,j) as n", kij); }),
            Errc::NonContiguousCountArgs);
  EXPECT_EQ(code_of([&] { parse_query("select [i] -> count(j) as n", kij); }),
            Errc::ValidationFailed);
}

TEST(BindQueryVars, UnnamedDimsBindInOrder) {
  const std::string names[] = {"", "", "i", "j"};
  auto b = bind_query_vars(parse_query("select [bi] -> count(bj) as n"), names);
  EXPECT_EQ(b.at("bi"), 0u);
  EXPECT_EQ(b.at("bj"), 1u);
}

TEST(Lowering, CanonicalForms) {
  const Index dims[2] = {4, 6};
  auto dia = parse_remap("(i,j) -> (j-i,i,j)").bind({});
  auto p = lower_to_canonical(parse_query("select [k] -> id() as ne", dia.dim_names()), dia, ranges(dims));
  EXPECT_EQ(stmt(p), "forall i forall j ne[j-i] |= map(B[i,j], 1)");
  EXPECT_EQ(p.aggs[0].group_bounds, (std::vector<DimBounds>{{-3, 5}}));

  auto id = parse_remap("(i,j) -> (i,j)").bind({});
  auto c = lower_to_canonical(parse_query("select [i] -> count(j) as nnz", id.dim_names()), id, ranges(dims));
  EXPECT_EQ(stmt(c),
            "(forall i forall j nnz[i] += map(W_nnz[i,j], 1)) where "
            "(forall i forall j W_nnz[i,j] |= map(B[i,j], 1))");

  auto m = lower_to_canonical(parse_query("select [i] -> max(j) as hi", id.dim_names()), id, ranges(dims));
  EXPECT_EQ(stmt(m), "forall i forall j hi[i] max= map(B[i,j], j+1)");
  EXPECT_EQ(m.aggs[0].s, 0);
  EXPECT_EQ(m.aggs[0].t, 5);
}

TEST(Optimizer, CountPerRow) {
  const auto t = example();
  const auto coo = run("(i,j) -> (i,j)", "select [i] -> count(j) as nnz", from_canonical(t, "coo"));
  EXPECT_EQ(stmt(coo.optimized), "forall i forall j nnz[i] += map(B[i,j], 1)");
  EXPECT_EQ(coo.results.trace.visits, t.nnz());
  const auto csr = run("(i,j) -> (i,j)", "select [i] -> count(j) as nnz", from_canonical(t, "csr"));
  EXPECT_EQ(stmt(csr.optimized), "forall i nnz[i] = width(B'[i])");
  EXPECT_EQ(csr.results.trace.visits, 0u);
  for (Index i = 0; i < 4; ++i) {
    const Index at[1] = {i};
    EXPECT_EQ(coo.results.at("nnz").raw_at(at), csr.results.at("nnz").raw_at(at));
  }
}

TEST(Optimizer, CounterToHistogram) {
  const auto t = example();
  const auto coo = run("(i,j) -> (k=#i in k,i,j)", "select [] -> max(k) as max_k", from_canonical(t, "coo"));
  EXPECT_NE(stmt(coo.optimized).find("H_max_k"), std::string::npos) << stmt(coo.optimized);
  const auto csr = run("(i,j) -> (k=#i in k,i,j)", "select [] -> max(k) as max_k", from_canonical(t, "csr"));
  EXPECT_EQ(stmt(csr.optimized), "forall i max_k[] max= width(B'[i])");
  // row 0 holds the most nonzeros: two
  EXPECT_EQ(coo.results.at("max_k").value_at({}), 1);
  EXPECT_EQ(csr.results.at("max_k").value_at({}), 1);
}

TEST(Optimizer, Idempotent) {
  std::mt19937_64 rng(2);
  const char* queries[][2] = {{"(i,j) -> (i,j)", "select [i] -> count(j) as n"},
                              {"(i,j) -> (i,j)", "select [] -> count(i,j) as n"},
                              {"(i,j) -> (j,i)", "select [j] -> count(i) as n, min(i) as lo"},
                              {"(i,j) -> (k=#i in k,i,j)", "select [] -> max(k) as mk"},
                              {"(i,j) -> (j-i,i,j)", "select [k] -> id() as ne"},
                              {"(i,j) -> (i/2,j/2,i,j)", "select [bi] -> count(bj) as n"}};
  for (const auto& fmt : builtin_names()) {
    const auto src = from_canonical(checks::random_matrix(rng, 9, 7, 0.3), fmt);
    for (const auto& q : queries) {
      auto r = run(q[0], q[1], src);
      EXPECT_EQ(render(optimize(r.optimized, profile_of(src))), render(r.optimized)) << fmt << " " << q[1];
    }
  }
}

TEST(Execute, DiagonalBitset) {
  const auto t = example();
  for (const auto& fmt : builtin_names()) {
    const auto r = run("(i,j) -> (j-i,i,j)", "select [k] -> id() as ne", from_canonical(t, fmt));
    const auto& ne = r.results.at("ne");
    std::set<Index> expect;
    for (const auto& e : t.entries()) expect.insert(e.coord[1] - e.coord[0]);
    EXPECT_EQ(expect, (std::set<Index>{-3, 0, 2}));
    for (Index k = -3; k <= 5; ++k) {
      const Index at[1] = {k};
      EXPECT_EQ(ne.raw_at(at), expect.count(k) ? 1 : 0) << fmt << " offset " << k;
    }
  }
}

TEST(Execute, EmptyTensor) {
  const auto src = from_canonical(CanonicalTensor({4, 6}, {}), "csr");
  const auto r = run("(i,j) -> (i,j)", "select [i] -> count(j) as n, min(j) as lo, max(j) as hi", src);
  for (const auto& label : {"n", "lo", "hi"}) {
    for (Index raw : r.results.at(label).raw) EXPECT_EQ(raw, 0);
  }
  const Index row[1] = {2};
  EXPECT_FALSE(r.results.at("lo").value_at(row));
  EXPECT_FALSE(r.results.at("hi").value_at(row));
}

TEST(Execute, CountIsDistinctNotNonzeros) {
  // duplicates in COO are one coordinate
  const Entry e[] = {{{0, 1}, 1}, {{0, 1}, 2}, {{0, 3}, 1}, {{2, 0}, 1}, {{2, 0}, 1}};
  const auto coo = coo_storage({3, 4}, e);
  const auto r = run("(i,j) -> (i,j)", "select [i] -> count(j) as n", coo);
  EXPECT_EQ(r.results.at("n").raw, (std::vector<Index>{2, 0, 1}));
  const auto all = run("(i,j) -> (i,j)", "select [] -> count(i,j) as n", coo);
  EXPECT_EQ(all.results.at("n").raw, (std::vector<Index>{3}));
}

TEST(Execute, ExtentOverflow) {
  const auto src = from_canonical(CanonicalTensor({64, 64}, {}), "coo");
  auto p = parse_remap("(i,j) -> (i,j)").bind({});
  const Index dims[2] = {64, 64};
  auto q = lower_to_canonical(parse_query("select [i] -> count(j) as n", p.dim_names()), p, ranges(dims));
  ExecOptions eo;
  eo.result_cap = 16;
  EXPECT_EQ(code_of([&] { execute_query(q, src, eo); }), Errc::ExtentOverflow);
}

TEST(Execute, DecodeStaysInBounds) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = checks::random_matrix(rng, 1 + Index(rng() % 20), 1 + Index(rng() % 20), 0.2);
    const auto r = run("(i,j) -> (j-i,i,j)", "select [k] -> max(i) as hi, min(i) as lo", from_canonical(m, "csr"));
    for (const auto& label : {"hi", "lo"}) {
      const auto& res = r.results.at(label);
      for (Index raw : res.raw) {
        if (raw == 0) continue;
        const auto v = res.decode(raw);
        ASSERT_TRUE(v);
        EXPECT_GE(*v, res.s);
        EXPECT_LE(*v, res.t);
      }
    }
  }
}

TEST(Execute, MaterializedBufferMatchesFused) {
  std::mt19937_64 rng(4);
  const auto m = checks::random_matrix(rng, 12, 10, 0.3);
  const auto src = from_canonical(m, "coo");
  const auto prog = parse_remap("(i,j) -> (k=#i in k,i,j)").bind({});
  // buffer of remapped coordinates, sorted
  RemappedBuffer buf;
  buf.arity = 3;
  std::map<Index, Index> seen;
  std::vector<std::pair<Coord, double>> rows;
  for (const auto& e : m.entries()) rows.push_back({{seen[e.coord[0]]++, e.coord[0], e.coord[1]}, e.value});
  std::sort(rows.begin(), rows.end());
  for (const auto& [c, v] : rows) {
    buf.coords.insert(buf.coords.end(), c.begin(), c.end());
    buf.values.push_back(v);
  }
  const Index dims[2] = {12, 10};
  const auto bounds = remapped_bounds(prog, dims);
  const auto ident = parse_remap("(k,i,j) -> (k,i,j)").bind({});
  auto q = lower_to_canonical(parse_query("select [k] -> count(i) as rows", ident.dim_names()), ident, bounds);
  const auto on_buffer = execute_query(optimize(q, SourceProfile{}), buf);
  const auto fused = run("(i,j) -> (k=#i in k,i,j)", "select [k] -> count(i) as rows", src);
  EXPECT_EQ(on_buffer.at("rows").raw, fused.results.at("rows").raw);
}
