#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tmorph {

using Index = std::int64_t;

/// Coordinates are signed so remapped dimensions (diagonal offsets) fit the
/// same type; canonical tensor coordinates are always nonnegative.
using Coord = std::vector<Index>;

/// Inclusive logical range of one dimension. `lower == upper + 1` is empty.
struct DimBounds {
  Index lower = 0;
  Index upper = -1;

  Index extent() const { return upper - lower + 1; }
  bool contains(Index c) const { return c >= lower && c <= upper; }
  friend bool operator==(const DimBounds&, const DimBounds&) = default;
};

struct Entry {
  Coord coord;
  double value = 0.0;

  friend bool operator==(const Entry&, const Entry&) = default;
};

enum class DupPolicy { error, sum, last };
enum class ZeroPolicy { strict, ignore_explicit_zeros };

/// Sorted, duplicate-free list of entries over fixed dimension sizes. This is
/// the reference form every storage format is compared against.
class CanonicalTensor {
 public:
  CanonicalTensor() = default;
  /// Takes entries that are already sorted and duplicate-free; use
  /// canonicalize() for arbitrary input.
  CanonicalTensor(std::vector<Index> dims, std::vector<Entry> sorted_entries);

  const std::vector<Index>& dims() const { return dims_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t order() const { return dims_.size(); }
  std::size_t nnz() const { return entries_.size(); }

  friend bool operator==(const CanonicalTensor&, const CanonicalTensor&) = default;

 private:
  std::vector<Index> dims_;
  std::vector<Entry> entries_;
};

CanonicalTensor canonicalize(std::vector<Entry> entries, std::vector<Index> dims,
                             DupPolicy policy = DupPolicy::sum);

bool equal_multiset(const CanonicalTensor& a, const CanonicalTensor& b,
                    ZeroPolicy policy = ZeroPolicy::strict);

/// Row-major dense grid of a canonical tensor.
struct DenseGrid {
  std::vector<Index> dims;
  std::vector<double> cells;

  double at(std::span<const Index> coord) const;
};

/// Cell cap for densify(); 2^22 unless TENSORMORPH_DENSE_CAP is set.
std::size_t dense_cap();

DenseGrid densify(const CanonicalTensor& t, std::size_t cap = dense_cap());
/// Inverse of densify(): keeps every nonzero cell.
CanonicalTensor sparsify(const DenseGrid& grid);

bool lex_less(std::span<const Index> a, std::span<const Index> b);

}  // namespace tmorph
