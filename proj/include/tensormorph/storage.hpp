#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tensormorph/tensor.hpp"

namespace tmorph {

enum class LevelKind : std::uint8_t {
  dense = 0,
  compressed = 1,
  singleton = 2,
  squeezed = 3,
  sliced = 4,
  banded = 5,
  offset = 6,
};

std::string_view level_kind_name(LevelKind k);
std::optional<LevelKind> parse_level_kind(std::string_view name);

struct LevelProperties {
  bool ordered = true;
  bool unique = true;
  bool full = false;
  bool stores_only_nonzeros = false;
  bool has_locate = false;
  bool has_pos_iter = false;
};

/// Resolved per-level parameters. Unused fields keep their defaults.
struct LevelParams {
  Index size = 0;    // dense N, sliced/squeezed K (resolved at assembly)
  Index lower = 0;   // coordinate stored in slot 0 of an unblocked dense level
  int block = -1;    // dense: level whose coordinate selects the block
  int base = -1;     // offset: coordinate = coords[base] + coords[delta]
  int delta = -1;
  bool unique = true;
  bool ordered = true;

  friend bool operator==(const LevelParams&, const LevelParams&) = default;
};

struct LevelStorage {
  LevelKind kind = LevelKind::dense;
  LevelParams params;
  std::vector<Index> pos;
  std::vector<Index> crd;
  std::vector<Index> perm;
  std::vector<Index> lo;

  friend bool operator==(const LevelStorage&, const LevelStorage&) = default;
};

/// A tensor stored in some level format. Level l stores remapped dimension l;
/// `projection[d]` names the level holding canonical dimension d verbatim.
struct TensorStorage {
  std::string format;
  std::map<std::string, Index> params;
  std::vector<Index> dims;
  std::vector<int> projection;
  std::vector<LevelStorage> levels;
  std::vector<double> values;
  /// False when the same canonical coordinate may be stored more than once.
  bool unique_coords = true;

  std::size_t order() const { return dims.size(); }
  friend bool operator==(const TensorStorage&, const TensorStorage&) = default;
};

/// Properties of level `l`; stores_only_nonzeros depends on the next level.
LevelProperties level_properties(const TensorStorage& t, std::size_t l);
LevelProperties level_properties(LevelKind kind, const LevelParams& params,
                                 std::optional<LevelKind> next);

/// Canonical dimension stored verbatim by each level, or -1.
std::vector<int> level_canonical_vars(const TensorStorage& t);

// ---------------------------------------------------------------------------
// Iteration
// ---------------------------------------------------------------------------

namespace detail {

template <class F>
void walk_rec(const TensorStorage& t, const std::vector<int>& canon, std::size_t l,
              std::size_t depth, Index parent, Index* coords, F& f) {
  if (l == depth) {
    f(std::span<const Index>(coords, depth), parent);
    return;
  }
  const LevelStorage& L = t.levels[l];
  const int cv = canon[l];
  const Index hi = cv >= 0 ? t.dims[static_cast<std::size_t>(cv)] : 0;
  const auto emit = [&](Index p, Index c) {
    if (cv >= 0 && (c < 0 || c >= hi)) return;  // padding slot
    coords[l] = c;
    walk_rec(t, canon, l + 1, depth, p, coords, f);
  };
  switch (L.kind) {
    case LevelKind::dense: {
      const Index n = L.params.size;
      const Index base =
          L.params.block >= 0 ? coords[L.params.block] * n : L.params.lower;
      for (Index k = 0; k < n; ++k) emit(parent * n + k, base + k);
      break;
    }
    case LevelKind::compressed:
      for (Index p = L.pos[static_cast<std::size_t>(parent)];
           p < L.pos[static_cast<std::size_t>(parent) + 1]; ++p) {
        emit(p, L.crd[static_cast<std::size_t>(p)]);
      }
      break;
    case LevelKind::singleton: {
      const Index c = L.crd[static_cast<std::size_t>(parent)];
      if (c != -1) emit(parent, c);
      break;
    }
    case LevelKind::squeezed: {
      const auto k = static_cast<Index>(L.perm.size());
      for (Index s = 0; s < k; ++s) emit(parent * k + s, L.perm[static_cast<std::size_t>(s)]);
      break;
    }
    case LevelKind::sliced: {
      const Index k = L.params.size;
      for (Index s = 0; s < k; ++s) emit(parent * k + s, s);
      break;
    }
    case LevelKind::banded: {
      const auto pp = static_cast<std::size_t>(parent);
      for (Index p = L.pos[pp]; p < L.pos[pp + 1]; ++p) emit(p, L.lo[pp] + (p - L.pos[pp]));
      break;
    }
    case LevelKind::offset:
      emit(parent, coords[L.params.base] + coords[L.params.delta]);
      break;
  }
}

}  // namespace detail

/// Visit every in-range position of level depth-1 as f(coords[0..depth), pos).
/// Slots whose canonical coordinate falls outside the tensor, and singleton
/// sentinels, are skipped.
template <class F>
void walk_levels(const TensorStorage& t, std::size_t depth, F&& f) {
  const auto canon = level_canonical_vars(t);
  std::vector<Index> coords(t.levels.size() + 1, 0);
  detail::walk_rec(t, canon, 0, depth, 0, coords.data(), f);
}

/// Visit every leaf slot as f(level_coords, leaf_pos, value), zeros included.
template <class F>
void walk_leaves(const TensorStorage& t, F&& f) {
  walk_levels(t, t.levels.size(), [&](std::span<const Index> c, Index p) {
    f(c, p, t.values[static_cast<std::size_t>(p)]);
  });
}

/// Canonical coordinates of a leaf reached by walk_leaves.
inline void project(const TensorStorage& t, std::span<const Index> level_coords,
                    std::span<Index> out) {
  for (std::size_t d = 0; d < t.projection.size(); ++d) {
    out[d] = level_coords[static_cast<std::size_t>(t.projection[d])];
  }
}

/// Nonzeros of `t` as a canonical tensor (duplicates summed, zeros dropped).
CanonicalTensor to_canonical(const TensorStorage& t);

/// COO storage of `entries` in the given order; duplicates are kept.
TensorStorage coo_storage(std::vector<Index> dims, std::span<const Entry> entries);
inline TensorStorage coo_storage(const CanonicalTensor& t) {
  return coo_storage(t.dims(), t.entries());
}

/// Scan compressed levels and set their `ordered` flag from the data.
void refresh_order_flags(TensorStorage& t);

/// Structural invariants of the level arrays; throws ValidationFailed.
void validate_storage(const TensorStorage& t);

// ---------------------------------------------------------------------------
// Source description used by planning and query optimization
// ---------------------------------------------------------------------------

struct SourceLevelInfo {
  LevelKind kind = LevelKind::dense;
  LevelProperties props;
  int canonical_var = -1;
};

struct SourceProfile {
  std::vector<SourceLevelInfo> levels;
  bool unique_coords = true;
  bool iterable = true;

  /// Canonical dims, outermost first, over which iteration is grouped.
  std::vector<int> grouped_prefix() const;
};

SourceProfile profile_of(const TensorStorage& t);

/// Remapped coordinates materialized once, sorted lexicographically.
struct RemappedBuffer {
  std::size_t arity = 0;
  std::vector<Index> coords;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  std::span<const Index> at(std::size_t n) const {
    return std::span<const Index>(coords).subspan(n * arity, arity);
  }
};

}  // namespace tmorph
