#include "tensormorph/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#include "tensormorph/error.hpp"

namespace tmorph {

namespace {

void check_in_range(const Coord& c, const std::vector<Index>& dims) {
  if (c.size() != dims.size()) {
    throw Error(Errc::DimMismatch, "coordinate arity " + std::to_string(c.size()) +
                                       " does not match order " + std::to_string(dims.size()));
  }
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (c[d] < 0 || c[d] >= dims[d]) {
      throw Error(Errc::CoordOutOfRange, "component " + std::to_string(c[d]) + " of dimension " +
                                             std::to_string(d) + " outside [0," +
                                             std::to_string(dims[d]) + ")");
    }
  }
}

std::vector<Entry> drop_zeros(const std::vector<Entry>& in) {
  std::vector<Entry> out;
  out.reserve(in.size());
  std::copy_if(in.begin(), in.end(), std::back_inserter(out),
               [](const Entry& e) { return e.value != 0.0; });
  return out;
}

}  // namespace

bool lex_less(std::span<const Index> a, std::span<const Index> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

CanonicalTensor::CanonicalTensor(std::vector<Index> dims, std::vector<Entry> sorted_entries)
    : dims_(std::move(dims)), entries_(std::move(sorted_entries)) {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    check_in_range(entries_[k].coord, dims_);
    if (k > 0 && !lex_less(entries_[k - 1].coord, entries_[k].coord)) {
      throw Error(Errc::DuplicateCoord, "entries not strictly increasing at index " +
                                            std::to_string(k));
    }
  }
}

CanonicalTensor canonicalize(std::vector<Entry> entries, std::vector<Index> dims,
                             DupPolicy policy) {
  for (const auto& e : entries) check_in_range(e.coord, dims);
  // stable so that `last` keeps the latest occurrence
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return lex_less(a.coord, b.coord); });
  std::vector<Entry> out;
  out.reserve(entries.size());
  for (auto& e : entries) {
    if (!out.empty() && out.back().coord == e.coord) {
      switch (policy) {
        case DupPolicy::error:
          throw Error(Errc::DuplicateCoord, "duplicate coordinate in input");
        case DupPolicy::sum:
          out.back().value += e.value;
          break;
        case DupPolicy::last:
          out.back().value = e.value;
          break;
      }
      continue;
    }
    out.push_back(std::move(e));
  }
  return CanonicalTensor(std::move(dims), std::move(out));
}

bool equal_multiset(const CanonicalTensor& a, const CanonicalTensor& b, ZeroPolicy policy) {
  if (a.dims() != b.dims()) {
    throw Error(Errc::DimMismatch, "tensors have different dimensions");
  }
  if (policy == ZeroPolicy::strict) return a.entries() == b.entries();
  return drop_zeros(a.entries()) == drop_zeros(b.entries());
}

std::size_t dense_cap() {
  if (const char* env = std::getenv("TENSORMORPH_DENSE_CAP")) {
    try {
      return static_cast<std::size_t>(std::stoull(env));
    } catch (const std::exception&) {
      // malformed override falls through to the default
    }
  }
  return std::size_t{1} << 22;
}

double DenseGrid::at(std::span<const Index> coord) const {
  std::size_t flat = 0;
  for (std::size_t d = 0; d < dims.size(); ++d) {
    flat = flat * static_cast<std::size_t>(dims[d]) + static_cast<std::size_t>(coord[d]);
  }
  return cells[flat];
}

DenseGrid densify(const CanonicalTensor& t, std::size_t cap) {
  std::size_t cells = 1;
  for (Index d : t.dims()) {
    if (d != 0 && cells > cap / static_cast<std::size_t>(d)) {
      throw Error(Errc::CapExceeded, "dense grid exceeds cap of " + std::to_string(cap));
    }
    cells *= static_cast<std::size_t>(d);
  }
  if (cells > cap) throw Error(Errc::CapExceeded, "dense grid exceeds cap of " + std::to_string(cap));
  DenseGrid grid{t.dims(), std::vector<double>(cells, 0.0)};
  for (const auto& e : t.entries()) {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < e.coord.size(); ++d) {
      flat = flat * static_cast<std::size_t>(t.dims()[d]) + static_cast<std::size_t>(e.coord[d]);
    }
    grid.cells[flat] = e.value;
  }
  return grid;
}

CanonicalTensor sparsify(const DenseGrid& grid) {
  std::vector<Entry> entries;
  const std::size_t order = grid.dims.size();
  Coord c(order, 0);
  for (std::size_t flat = 0; flat < grid.cells.size(); ++flat) {
    if (grid.cells[flat] != 0.0) entries.push_back({c, grid.cells[flat]});
    // advance the row-major odometer
    for (std::size_t d = order; d-- > 0;) {
      if (++c[d] < grid.dims[d]) break;
      c[d] = 0;
    }
  }
  return CanonicalTensor(grid.dims, std::move(entries));
}

}  // namespace tmorph
