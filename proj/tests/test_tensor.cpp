#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "tensormorph/error.hpp"
#include "tensormorph/tensor.hpp"

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

}  // namespace

TEST(Canonicalize, SumsDuplicates) {
  auto t = canonicalize({{{0, 0}, 1}, {{0, 0}, 2}}, {1, 1}, DupPolicy::sum);
  ASSERT_EQ(t.nnz(), 1u);
  EXPECT_EQ(t.entries()[0].value, 3.0);
}

TEST(Canonicalize, EmptyInput) {
  for (auto p : {DupPolicy::error, DupPolicy::sum, DupPolicy::last}) {
    auto t = canonicalize({}, {4, 6}, p);
    EXPECT_EQ(t.nnz(), 0u);
    EXPECT_EQ(t.dims(), (std::vector<Index>{4, 6}));
  }
}

TEST(Canonicalize, ErrorPolicyAndRange) {
  EXPECT_EQ(code_of([] { canonicalize({{{1, 1}, 1}, {{1, 1}, 2}}, {2, 2}, DupPolicy::error); }),
            Errc::DuplicateCoord);
  EXPECT_EQ(code_of([] { canonicalize({{{2, 0}, 1}}, {2, 2}); }), Errc::CoordOutOfRange);
  EXPECT_EQ(code_of([] { canonicalize({{{-1, 0}, 1}}, {2, 2}); }), Errc::CoordOutOfRange);
  EXPECT_EQ(code_of([] { canonicalize({{{0}, 1}}, {2, 2}); }), Errc::DimMismatch);
}

TEST(Canonicalize, LastMatchesDenseGridReplay) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Index> c(0, 31);
  std::vector<Entry> entries;
  std::vector<double> grid(32 * 32, 0.0);
  for (int n = 0; n < 100; ++n) {
    const Index i = c(rng), j = c(rng);
    const double v = static_cast<double>(n + 1);
    entries.push_back({{i, j}, v});
    grid[i * 32 + j] = v;
  }
  auto t = canonicalize(entries, {32, 32}, DupPolicy::last);
  std::vector<Entry> expect;
  for (Index i = 0; i < 32; ++i)
    for (Index j = 0; j < 32; ++j)
      if (grid[i * 32 + j] != 0.0) expect.push_back({{i, j}, grid[i * 32 + j]});
  EXPECT_EQ(t.entries(), expect);
}

TEST(EqualMultiset, Policies) {
  CanonicalTensor a({2, 2}, {{{1, 1}, 5}});
  CanonicalTensor b({2, 2}, {{{0, 0}, 0}, {{1, 1}, 5}});
  EXPECT_TRUE(equal_multiset(a, a));
  EXPECT_FALSE(equal_multiset(a, b));
  EXPECT_TRUE(equal_multiset(a, b, ZeroPolicy::ignore_explicit_zeros));
  CanonicalTensor c({3, 2}, {});
  EXPECT_EQ(code_of([&] { equal_multiset(a, c); }), Errc::DimMismatch);
}

TEST(EqualMultiset, DetectsPerturbation) {
  std::mt19937_64 rng(11);
  std::vector<Entry> e;
  for (Index i = 0; i < 10; ++i) e.push_back({{i, (i * 7) % 10}, double(i + 1)});
  auto a = canonicalize(e, {10, 10});
  for (int trial = 0; trial < 20; ++trial) {
    auto f = e;
    f[rng() % f.size()].value += 0.5;
    EXPECT_FALSE(equal_multiset(a, canonicalize(f, {10, 10})));
  }
}

TEST(Densify, SmallGrids) {
  auto g = densify(CanonicalTensor({2, 2}, {{{0, 1}, 7}}));
  EXPECT_EQ(g.cells, (std::vector<double>{0, 7, 0, 0}));
  const Index at[2] = {0, 1};
  EXPECT_EQ(g.at(at), 7.0);
  auto z = densify(CanonicalTensor({2, 2}, {}));
  EXPECT_EQ(z.cells, (std::vector<double>(4, 0.0)));
  EXPECT_EQ(code_of([] { densify(CanonicalTensor({100, 100}, {}), 1000); }), Errc::CapExceeded);
}

TEST(Densify, RoundTrip) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Entry> e;
    for (int n = 0; n < 30; ++n) {
      e.push_back({{Index(rng() % 5), Index(rng() % 4), Index(rng() % 3)}, double(rng() % 9 + 1)});
    }
    auto t = canonicalize(e, {5, 4, 3});
    EXPECT_TRUE(equal_multiset(sparsify(densify(t)), t));
  }
}

TEST(CanonicalTensor, RejectsUnsortedEntries) {
  EXPECT_EQ(code_of([] { CanonicalTensor({2, 2}, {{{1, 0}, 1}, {{0, 0}, 1}}); }), Errc::DuplicateCoord);
}
