#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tensormorph/tensor.hpp"

namespace tmorph::checks {

using Rng = std::mt19937_64;

// Generators ---------------------------------------------------------------

/// Each cell is nonzero with probability `density`.
CanonicalTensor random_matrix(Rng& rng, Index rows, Index cols, double density);
/// Nonzeros within `bandwidth` of the diagonal, each kept with probability `fill`.
CanonicalTensor banded_matrix(Rng& rng, Index n, Index bandwidth, double fill = 0.8);
/// Every row holds between 0 and k nonzeros.
CanonicalTensor row_balanced_matrix(Rng& rng, Index rows, Index cols, Index k);
/// The conversion corpus: random, banded and row-balanced matrices in turn.
std::vector<CanonicalTensor> conversion_corpus(std::uint64_t seed, std::size_t count = 50);
/// Square banded matrix with the given diagonal offsets fully populated.
CanonicalTensor diagonals(Index n, std::span<const Index> offsets);

// Oracles ------------------------------------------------------------------

/// Dense row-major comparison that ignores stored zeros.
bool dense_equal(const CanonicalTensor& a, const CanonicalTensor& b);
/// Bit string, most significant first, interleaving `bits` bits of each
/// coordinate with coordinate 0 last in every group.
std::string interleave_string(std::span<const Index> coords, int bits);
/// pos array of a compressed level from per-parent child counts.
std::vector<Index> prefix_pos(std::span<const Index> counts);

// Criteria -----------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 20221201;
  std::size_t corpus = 50;
  std::size_t queries = 200;
  std::size_t counter_cases = 100;
  std::size_t count_vectors = 1000;
  Index bench_n = 4096;
  std::size_t bench_repeats = 21;
  double bench_slack = 1.10;
};

/// Criteria 1 and 6 share the conversion sweep; the sweep result is cached
/// per options object.
CheckResult check_conversions(const SuiteOptions& o);
CheckResult check_queries(const SuiteOptions& o);
CheckResult check_rewrites(const SuiteOptions& o);
CheckResult check_counters(const SuiteOptions& o);
CheckResult check_direct_vs_via(const SuiteOptions& o);
CheckResult check_protocol(const SuiteOptions& o);
CheckResult check_morton(const SuiteOptions& o);

struct NumberedCheck {
  int id;
  std::function<CheckResult(const SuiteOptions&)> run;
};

/// All criteria in order; `selftest` skips the benchmark.
std::vector<NumberedCheck> all_checks(bool include_bench);

/// "[PASS] 1 name: detail" lines; returns the number of failures.
int run_checks(const std::vector<NumberedCheck>& checks, const SuiteOptions& o, std::ostream& out);

/// Median wall time in milliseconds of `repeats` runs of `fn`.
double median_ms(std::size_t repeats, const std::function<void()>& fn);

}  // namespace tmorph::checks
