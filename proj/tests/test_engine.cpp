#include <gtest/gtest.h>

#include <functional>

#include "checks.hpp"
#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"

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

// The 4x6 matrix used throughout: rows hold 2, 2, 3 and 2 nonzeros.
CanonicalTensor sample() {
  return canonicalize({{{0, 0}, 5},
                       {{0, 1}, 1.5},
                       {{1, 1}, 7},
                       {{1, 3}, 3},
                       {{2, 0}, 8},
                       {{2, 2}, -4},
                       {{2, 5}, 2},
                       {{3, 4}, 6},
                       {{3, 5}, 9}},
                      {4, 6});
}

std::shared_ptr<const FormatDef> fmt(std::string_view name) { return FormatRegistry::global().get(name); }

std::string explain_pair(std::string_view a, std::string_view b, const std::map<std::string, Index>& params = {}) {
  const Index dims[] = {4, 6};
  PlanOptions o;
  o.params = params;
  return explain(plan_conversion(*fmt(a), fmt(b), dims, o));
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST(Convert, SampleCsrArrays) {
  const auto csr = convert(coo_storage(sample()), "csr").tensor;
  EXPECT_EQ(csr.levels[0].params.size, 4);
  EXPECT_EQ(csr.levels[1].pos, (std::vector<Index>{0, 2, 4, 7, 9}));
  EXPECT_EQ(csr.levels[1].crd, (std::vector<Index>{0, 1, 1, 3, 0, 2, 5, 4, 5}));
  EXPECT_EQ(csr.values, (std::vector<double>{5, 1.5, 7, 3, 8, -4, 2, 6, 9}));
}

TEST(Convert, SampleDiaAndEll) {
  const auto dia = convert(coo_storage(sample()), "dia").tensor;
  const auto t = sample();
  std::vector<Index> offsets;
  for (const auto& e : t.entries()) offsets.push_back(e.coord[1] - e.coord[0]);
  std::sort(offsets.begin(), offsets.end());
  offsets.erase(std::unique(offsets.begin(), offsets.end()), offsets.end());
  EXPECT_EQ(dia.levels[0].perm, offsets);
  EXPECT_EQ(dia.values.size(), offsets.size() * 4);

  const auto ell = convert(coo_storage(sample()), "ell").tensor;
  EXPECT_EQ(ell.levels[0].params.size, 3);
  EXPECT_EQ(ell.values.size(), 12u);
  // slot k of row i holds that row's k-th nonzero
  EXPECT_EQ(ell.levels[2].crd, (std::vector<Index>{0, 1, 0, 4, 1, 3, 2, 5, -1, -1, 5, -1}));
}

TEST(Convert, ChainRoundTrip) {
  const auto t = sample();
  TensorStorage cur = coo_storage(t);
  for (const char* f : {"csr", "csc", "dia", "ell", "sky", "bcsr", "coo"}) {
    ProtocolLog log;
    cur = convert(cur, f, {}, &log).tensor;
    EXPECT_EQ(cur.format, f);
    EXPECT_EQ(log.count(), 0u) << f;
    EXPECT_NO_THROW(validate_storage(cur)) << f;
    EXPECT_TRUE(equal_multiset(to_canonical(cur), t, ZeroPolicy::ignore_explicit_zeros)) << f;
  }
}

TEST(Convert, AllPairsOnCorpus) {
  const auto corpus = checks::conversion_corpus(7, 12);
  for (const auto& t : corpus) {
    for (const auto& a : builtin_names()) {
      const auto src = from_canonical(t, a);
      for (const auto& b : builtin_names()) {
        ProtocolLog log;
        const auto out = convert(src, b, {}, &log);
        ASSERT_TRUE(checks::dense_equal(to_canonical(out.tensor), t)) << a << " -> " << b;
        EXPECT_EQ(log.count(), 0u);
      }
    }
  }
}

TEST(Convert, EmptyMatrix) {
  const CanonicalTensor t({5, 3}, {});
  for (const auto& name : builtin_names()) {
    const auto out = convert(coo_storage(t), name).tensor;
    EXPECT_TRUE(to_canonical(out).entries().empty()) << name;
    // sky keeps the diagonal even when it is zero
    if (name == "sky") {
      EXPECT_EQ(out.levels[1].pos, (std::vector<Index>{0, 1, 2, 3, 3, 3}));
      continue;
    }
    for (const auto& L : out.levels) {
      for (Index p : L.pos) EXPECT_EQ(p, 0) << name;
    }
  }
  EXPECT_TRUE(convert(coo_storage(t), "dia").tensor.levels[0].perm.empty());
  EXPECT_EQ(convert(coo_storage(t), "ell").tensor.levels[0].params.size, 0);
}

TEST(Convert, DoubleTranspose) {
  checks::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = checks::random_matrix(rng, 1 + Index(rng() % 20), 1 + Index(rng() % 20), 0.3);
    const auto csr = from_canonical(t, "csr");
    const auto back = convert(convert(csr, "csc").tensor, "csr").tensor;
    EXPECT_EQ(back.levels, csr.levels);
    EXPECT_EQ(back.values, csr.values);
  }
}

TEST(Convert, CooDuplicatesSummed) {
  const std::vector<Entry> dup = {{{1, 2}, 1.0}, {{0, 0}, 2.0}, {{1, 2}, 4.0}};
  const auto coo = coo_storage({3, 3}, dup);
  for (const char* f : {"csr", "csc", "dia", "ell", "sky", "bcsr"}) {
    const auto out = convert(coo, f).tensor;
    const auto c = to_canonical(out);
    ASSERT_EQ(c.entries().size(), 2u) << f;
    EXPECT_EQ(c.entries()[1].value, 5.0) << f;
  }
}

TEST(Convert, OrderMismatch) {
  const CanonicalTensor t({2, 2, 2}, {});
  EXPECT_EQ(code_of([&] { convert(coo_storage(t), "csr"); }), Errc::OrderMismatch);
  const Index dims[] = {3};
  EXPECT_EQ(code_of([&] { plan_conversion(*fmt("csr"), fmt("csc"), dims); }), Errc::OrderMismatch);
}

TEST(Convert, UnlocatableParentsAreInfeasible) {
  FormatDef def = parse_format_def(
      "name: stacked\n"
      "remap: (i,j) -> (i/2,i,j)\n"
      "levels:\n"
      "  compressed unique=false\n"
      "  singleton\n"
      "  compressed\n"
      "queries:\n"
      "  0: select [] -> count(b,i) as n\n"
      "  2: select [b,i] -> count(j) as m\n");
  validate_format(def);
  auto dst = std::make_shared<const FormatDef>(def);
  const Index dims[] = {4, 6};
  EXPECT_EQ(code_of([&] { plan_conversion(*fmt("csr"), dst, dims); }), Errc::PlanInfeasible);
}

TEST(Convert, ViaMatchesDirect) {
  const auto src = from_canonical(sample(), "coo");
  for (const char* mid : {"csr", "csc", "coo"}) {
    const auto direct = convert(src, "dia");
    const auto via = convert_via(src, mid, "dia");
    EXPECT_EQ(via.tensor, direct.tensor) << mid;
    EXPECT_GE(via.trace.total_passes(), direct.trace.total_passes());
  }
  const auto same = convert_via(src, "coo", "csr");
  EXPECT_EQ(same.trace.total_visits(), convert(src, "csr").trace.total_visits());
}

TEST(Convert, TraceCounts) {
  const auto out = convert(coo_storage(sample()), "csr");
  const auto* analysis = out.trace.find("analysis");
  const auto* coords = out.trace.find("assembly:coords");
  ASSERT_TRUE(analysis && coords);
  EXPECT_EQ(analysis->passes, 1u);
  EXPECT_EQ(analysis->visits, 9u);
  EXPECT_EQ(coords->passes, 1u);
  EXPECT_EQ(coords->visits, 9u);
  EXPECT_TRUE(contains(out.trace.to_string(), "analysis: passes=1 visits=9"));
  // column counts need every nonzero; ell row widths come from pos alone
  EXPECT_EQ(convert(out.tensor, "csc").trace.find("analysis")->visits, 9u);
  EXPECT_EQ(convert(out.tensor, "ell").trace.find("analysis")->visits, 0u);
}

TEST(Convert, MaterializedStrategy) {
  FormatDef def = parse_format_def(
      "name: zorder\n"
      "remap: (i,j) -> (morton(i,j),i,j)\n"
      "levels:\n"
      "  compressed\n"
      "  singleton\n"
      "  singleton\n"
      "queries:\n"
      "  0: select [] -> count(z) as n\n");
  validate_format(def);
  auto dst = std::make_shared<const FormatDef>(def);
  const Index dims[] = {4, 6};
  const auto plan = plan_conversion(*fmt("csr"), dst, dims);
  EXPECT_EQ(plan.strategy, RemapStrategy::materialized);
  EXPECT_TRUE(contains(explain(plan), "[materialized]"));

  const auto t = sample();
  const auto out = execute(plan, from_canonical(t, "csr"));
  EXPECT_TRUE(equal_multiset(to_canonical(out.tensor), t, ZeroPolicy::ignore_explicit_zeros));
  // stored in z-order
  std::vector<std::string> keys;
  walk_leaves(out.tensor, [&](std::span<const Index> c, Index, double) {
    const Index ij[] = {c[1], c[2]};
    keys.push_back(checks::interleave_string(ij, 8));
  });
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(keys.size(), 9u);
}

TEST(Convert, KeyedCounterMaterializes) {
  // counting along rows from a column-grouped source needs a table
  const Index dims[] = {4, 6};
  const auto plan = plan_conversion(*fmt("csc"), fmt("ell"), dims);
  EXPECT_EQ(plan.counter_modes.at(0), CounterMode::keyed_table);
  EXPECT_EQ(plan.strategy, RemapStrategy::materialized);
  const auto t = sample();
  const auto out = execute(plan, from_canonical(t, "csc"));
  EXPECT_EQ(out.tensor, from_canonical(t, "ell"));
}

TEST(Explain, Plans) {
  const auto coo_csr = explain_pair("coo", "csr");
  EXPECT_TRUE(contains(coo_csr, "plan: coo -> csr\n"));
  EXPECT_TRUE(contains(coo_csr, "edge-insertion: sequenced"));
  EXPECT_TRUE(contains(coo_csr, "edge-insertion phases: 1"));

  const auto csr_dia = explain_pair("csr", "dia");
  EXPECT_TRUE(contains(csr_dia, "edge-insertion phases: 0"));
  EXPECT_FALSE(contains(csr_dia, "sequenced"));

  const auto csr_ell = explain_pair("csr", "ell");
  EXPECT_TRUE(contains(csr_ell, "counter #i: scalar_reuse"));
  EXPECT_TRUE(contains(csr_ell, "max_k optimized: forall i max_k[] max= width(B'[i])"));

  const auto bcsr = explain_pair("coo", "bcsr", {{"M", 2}, {"N", 3}});
  EXPECT_TRUE(contains(bcsr, "param: M=2"));
  EXPECT_TRUE(contains(bcsr, "param: N=3"));
  EXPECT_TRUE(contains(bcsr, "dedup: level 1"));

  EXPECT_TRUE(contains(explain_pair("coo", "sky"), "levels 1-1 [banded]; edge-insertion: sequenced"));
  EXPECT_EQ(explain_pair("csr", "dia"), csr_dia);
}
