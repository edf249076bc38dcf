#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <random>

#include "checks.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/remap.hpp"

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

Coord eval1(const std::string& text, Coord c, const std::map<std::string, Index>& params = {},
            std::span<const std::string> names = {}) {
  CounterState state;
  return eval_remap(parse_remap(text, names), params, c, state);
}

}  // namespace

TEST(ParseRemap, DiagonalShape) {
  auto p = parse_remap("(i,j) -> (j-i,i,j)");
  EXPECT_EQ(p.src_arity(), 2u);
  EXPECT_EQ(p.dst_arity(), 3u);
  EXPECT_TRUE(p.counters().empty());
  EXPECT_FALSE(p.is_identity());
  EXPECT_EQ(to_string(p.dst_exprs()[0]), "j-i");
  ASSERT_TRUE(p.dst_of_src(0));
  EXPECT_EQ(*p.dst_of_src(0), 1u);
  EXPECT_EQ(*p.dst_of_src(1), 2u);
}

TEST(ParseRemap, Identity) {
  auto p = parse_remap("(i,j) -> (i,j)");
  EXPECT_TRUE(p.is_identity());
  EXPECT_EQ(p.dim_names(), (std::vector<std::string>{"i", "j"}));
}

TEST(ParseRemap, EllCounter) {
  auto p = parse_remap("(i,j) -> (k=#i in k,i,j)");
  ASSERT_EQ(p.counters().size(), 1u);
  EXPECT_EQ(p.counters()[0].key_vars, (std::vector<std::string>{"i"}));
  EXPECT_EQ(p.dim_names()[0], "k");
}

TEST(ParseRemap, Precedence) {
  // | lowest, then ^, &, shifts, +/-, then * / %
  EXPECT_EQ(eval1("(i) -> (i | 2 ^ 3 & 1, i)", {4}), (Coord{4 | (2 ^ (3 & 1)), 4}));
  EXPECT_EQ(eval1("(i) -> (1 << i + 1, i)", {2}), (Coord{1 << 3, 2}));
  EXPECT_EQ(eval1("(i) -> (i + 6 / 3 * 2, i)", {1}), (Coord{1 + 4, 1}));
  EXPECT_EQ(eval1("(i) -> ((i + 6) / 4, i)", {2}), (Coord{2, 2}));
  EXPECT_EQ(eval1("(i) -> (i - 3 - 2, i)", {10}), (Coord{5, 10}));
  EXPECT_EQ(eval1("(i) -> (i % 4 & 1, i)", {7}), (Coord{1, 7}));
  EXPECT_EQ(eval1("( i , j )->( j>>1 , i , j )", {0, 9}), (Coord{4, 0, 9}));
}

TEST(ParseRemap, PrintedFormReparses) {
  for (const char* text : {"(i,j) -> (j-i,i,j)", "(i,j) -> ((i+j)/2,i,j)", "(i,j) -> (i-(j-1),i,j)",
                           "(i,j) -> (k=#i in k,i,j)", "(i,j,k) -> (morton(i/4,j/4,k/4),i,j,k)",
                           "(i) -> (a=i+1 in a*a,i)", "(i,j) -> (i<<2|j&3,i,j)"}) {
    auto p = parse_remap(text);
    std::string reprinted = "(";
    for (std::size_t s = 0; s < p.src_arity(); ++s) reprinted += (s ? "," : "") + p.src_vars()[s];
    reprinted += ") -> (";
    for (std::size_t d = 0; d < p.dst_arity(); ++d) reprinted += (d ? "," : "") + to_string(p.dst_exprs()[d]);
    reprinted += ")";
    auto q = parse_remap(reprinted);
    ASSERT_EQ(q.dst_arity(), p.dst_arity()) << reprinted;
    for (std::size_t d = 0; d < p.dst_arity(); ++d) {
      EXPECT_TRUE(structurally_equal(*p.dst_exprs()[d], *q.dst_exprs()[d])) << reprinted;
    }
  }
}

TEST(ParseRemap, Errors) {
  const auto err_at = [](const char* text) -> std::pair<Errc, std::int64_t> {
    try {
      parse_remap(text);
    } catch (const Error& e) {
      return {e.code(), e.offset()};
    }
    return {Errc::IoError, -2};
  };
  EXPECT_EQ(err_at("(i,j) -> (i,").first, Errc::SyntaxError);
  auto [code, off] = err_at("(i,j) -> (i $ j,i,j)");
  EXPECT_EQ(code, Errc::SyntaxError);
  EXPECT_EQ(off, 12);
  EXPECT_EQ(err_at("(i,j) -> (q,i,j)").first, Errc::UnboundVariable);
  EXPECT_EQ(err_at("(i,j) -> (i)").first, Errc::ArityError);
  EXPECT_EQ(err_at("(i,i) -> (i,i)").first, Errc::SyntaxError);
  EXPECT_EQ(err_at("(i,j) -> (k, k=i in k, i, j)").first, Errc::UnboundVariable);
}

TEST(EvalRemap, SpecExamples) {
  EXPECT_EQ(eval1("(i,j) -> (j-i,i,j)", {1, 3}), (Coord{2, 1, 3}));
  const std::string names[] = {"M", "N"};
  EXPECT_EQ(eval1("(i,j) -> (i/M,j/N,i,j)", {5, 4}, {{"M", 2}, {"N", 3}}, names),
            (Coord{2, 1, 5, 4}));
}

TEST(EvalRemap, KeyedCounterReplay) {
  auto p = parse_remap("(i,j) -> (k=#i in k,i,j)").bind({});
  CounterState state({CounterMode::keyed_table});
  RemapEvaluator ev(p, state);
  const std::vector<Coord> in = {{0, 2}, {0, 5}, {1, 1}, {0, 0}};
  const std::vector<Coord> expect = {{0, 0, 2}, {1, 0, 5}, {0, 1, 1}, {2, 0, 0}};
  // oracle: count prior occurrences of each row
  std::map<Index, Index> prior;
  for (std::size_t n = 0; n < in.size(); ++n) {
    const Coord got = ev.eval(in[n]);
    EXPECT_EQ(got, expect[n]);
    EXPECT_EQ(got[0], prior[in[n][0]]++);
  }
}

TEST(EvalRemap, CounterReferencedTwiceYieldsOneValue) {
  auto p = parse_remap("(i,j) -> (k=#i in k,k+1,i,j)").bind({});
  CounterState state({CounterMode::keyed_table});
  RemapEvaluator ev(p, state);
  EXPECT_EQ(ev.eval(Coord{3, 1}), (Coord{0, 1, 3, 1}));
  EXPECT_EQ(ev.eval(Coord{3, 2}), (Coord{1, 2, 3, 2}));
}

TEST(EvalRemap, ScalarModeRejectsRegression) {
  auto p = parse_remap("(i,j) -> (k=#i in k,i,j)").bind({});
  CounterState state({CounterMode::scalar_reuse});
  RemapEvaluator ev(p, state);
  ev.eval(Coord{0, 0});
  ev.eval(Coord{1, 0});
  EXPECT_EQ(code_of([&] { ev.eval(Coord{0, 1}); }), Errc::CounterOrderViolation);
}

TEST(EvalRemap, ArithmeticErrors) {
  EXPECT_EQ(code_of([] { eval1("(i,j) -> ((i-j)/2,i,j)", {0, 1}); }), Errc::NegativeOperand);
  EXPECT_EQ(code_of([] { eval1("(i,j) -> ((i-j)%2,i,j)", {0, 1}); }), Errc::NegativeOperand);
  EXPECT_EQ(code_of([] { eval1("(i,j) -> (i<<j,i,j)", {1, 63}); }), Errc::InvalidShift);
  EXPECT_EQ(code_of([] { parse_remap("(i,j) -> (i/0,i,j)").bind({}); }), Errc::DivisorNotPositive);
  const std::string m[] = {"M"};
  EXPECT_EQ(code_of([&] { parse_remap("(i,j) -> (i/M,i,j)", m).bind({{"M", 0}}); }),
            Errc::DivisorNotPositive);
  EXPECT_EQ(code_of([&] { eval1("(i,j) -> (i/M,i,j)", {1, 1}, {}, m); }), Errc::MissingParameter);
}

TEST(Morton, SmallCases) {
  const Index zero[3] = {0, 0, 0};
  for (int bits : {1, 5, 20}) EXPECT_EQ(morton_code(zero, bits), 0);
  const Index a[2] = {1, 0}, b[2] = {0, 1};
  EXPECT_EQ(morton_code(a, 1), 1);
  EXPECT_EQ(morton_code(b, 1), 2);
  const Index big[2] = {4, 0};
  EXPECT_EQ(code_of([&] { morton_code(big, 2); }), Errc::BitsOutOfRange);
  EXPECT_EQ(code_of([&] { morton_code(a, 40); }), Errc::BitsOutOfRange);
}

TEST(Morton, PairsSortLikeInterleavedStrings) {
  std::vector<std::pair<Index, std::string>> rows;
  for (Index r = 0; r < 16; ++r) {
    for (Index s = 0; s < 16; ++s) {
      const Index c[2] = {r, s};
      rows.push_back({morton_code(c, 4), checks::interleave_string(c, 4)});
    }
  }
  auto by_code = rows, by_string = rows;
  std::sort(by_code.begin(), by_code.end());
  std::sort(by_string.begin(), by_string.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });
  EXPECT_EQ(by_code, by_string);
}

TEST(Morton, ExpandedShiftMaskFormAgrees) {
  // two-bit interleave written out by hand
  auto p = parse_remap("(i,j) -> ((i&1)|((j&1)<<1)|((i&2)<<1)|((j&2)<<2),i,j)").bind({});
  auto q = parse_remap("(i,j) -> (morton(i,j),i,j)").bind({});
  CounterState s1, s2;
  RemapEvaluator e1(p, s1), e2(q, s2);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(e1.eval(Coord{i, j})[0], e2.eval(Coord{i, j})[0]);
  }
  EXPECT_TRUE(q.expensive());
  EXPECT_TRUE(p.expensive());
  EXPECT_FALSE(parse_remap("(i,j) -> (j-i,i,j)").expensive());
}

TEST(CounterMode, Choice) {
  auto p = parse_remap("(i,j) -> (k=#i in k,i,j)");
  const std::string rows[] = {"i"};
  const std::string cols[] = {"j"};
  EXPECT_EQ(choose_counter_mode(p.counters()[0], rows), CounterMode::scalar_reuse);
  EXPECT_EQ(choose_counter_mode(p.counters()[0], {}), CounterMode::keyed_table);
  EXPECT_EQ(choose_counter_mode(p.counters()[0], cols), CounterMode::keyed_table);
  auto g = parse_remap("(i,j) -> (k=# in k,i,j)");
  EXPECT_EQ(choose_counter_mode(g.counters()[0], {}), CounterMode::scalar_reuse);
}

TEST(CounterMode, ModesAgreeOnGroupedInput) {
  std::mt19937_64 rng(5);
  auto p = parse_remap("(i,j) -> (k=#i in k,i,j)").bind({});
  for (int trial = 0; trial < 30; ++trial) {
    auto m = checks::random_matrix(rng, 1 + Index(rng() % 20), 1 + Index(rng() % 20), 0.3);
    CounterState keyed({CounterMode::keyed_table}), scalar({CounterMode::scalar_reuse});
    RemapEvaluator a(p, keyed), b(p, scalar);
    for (const auto& e : m.entries()) EXPECT_EQ(a.eval(e.coord), b.eval(e.coord));
  }
}

TEST(CounterState, DenseAndHashTablesAgree) {
  std::vector<std::optional<std::vector<DimBounds>>> extents = {std::vector<DimBounds>{{0, 9}}};
  CounterState dense({CounterMode::keyed_table}, extents), hashed({CounterMode::keyed_table});
  std::mt19937_64 rng(9);
  for (int n = 0; n < 200; ++n) {
    const Index k[1] = {Index(rng() % 10)};
    EXPECT_EQ(dense.next(0, k), hashed.next(0, k));
  }
}

TEST(Bounds, IntervalArithmetic) {
  const Index dims[2] = {4, 6};
  auto dia = remapped_bounds(parse_remap("(i,j) -> (j-i,i,j)").bind({}), dims);
  EXPECT_EQ(dia[0], (DimBounds{-3, 5}));
  EXPECT_EQ(dia[1], (DimBounds{0, 3}));
  EXPECT_EQ(dia[2], (DimBounds{0, 5}));
  auto blocked = remapped_bounds(parse_remap("(i,j) -> (i/2,j/4,i,j)").bind({}), dims);
  EXPECT_EQ(blocked[0], (DimBounds{0, 1}));
  EXPECT_EQ(blocked[1], (DimBounds{0, 1}));
  // counters range over the non-key extent
  auto ell = remapped_bounds(parse_remap("(i,j) -> (k=#i in k,i,j)").bind({}), dims);
  EXPECT_EQ(ell[0], (DimBounds{0, 5}));
  auto bad = parse_remap("(i,j) -> (i/(j-1),i,j)").bind({});
  EXPECT_EQ(code_of([&] { remapped_bounds(bad, dims); }), Errc::UnboundedDim);
}

TEST(Bounds, ContainEveryEvaluatedCoordinate) {
  std::mt19937_64 rng(21);
  const char* texts[] = {"(i,j) -> (j-i,i,j)", "(i,j) -> (i+j,i,j)", "(i,j) -> (i/3,j%5,i,j)",
                         "(i,j) -> (morton(i,j),i,j)", "(i,j) -> (i*j-i,i,j)",
                         "(i,j) -> (i<<2|j&3,i,j)"};
  for (const char* t : texts) {
    auto p = parse_remap(t).bind({});
    const Index dims[2] = {1 + Index(rng() % 30), 1 + Index(rng() % 30)};
    auto b = remapped_bounds(p, dims);
    CounterState s;
    RemapEvaluator ev(p, s);
    for (Index i = 0; i < dims[0]; ++i) {
      for (Index j = 0; j < dims[1]; ++j) {
        auto c = ev.eval(Coord{i, j});
        for (std::size_t d = 0; d < c.size(); ++d) EXPECT_TRUE(b[d].contains(c[d])) << t;
      }
    }
  }
}
