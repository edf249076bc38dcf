#include "tensormorph/storage.hpp"

#include <algorithm>
#include <array>

#include "tensormorph/error.hpp"

namespace tmorph {

namespace {

constexpr std::array<std::string_view, 7> kKindNames = {
    "dense", "compressed", "singleton", "squeezed", "sliced", "banded", "offset"};

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::ValidationFailed, msg); }

}  // namespace

std::string_view level_kind_name(LevelKind k) {
  return kKindNames.at(static_cast<std::size_t>(k));
}

std::optional<LevelKind> parse_level_kind(std::string_view name) {
  for (std::size_t k = 0; k < kKindNames.size(); ++k) {
    if (kKindNames[k] == name) return static_cast<LevelKind>(k);
  }
  return std::nullopt;
}

LevelProperties level_properties(LevelKind kind, const LevelParams& params,
                                 std::optional<LevelKind> next) {
  LevelProperties p;
  switch (kind) {
    case LevelKind::dense:
      p = {true, true, true, next == LevelKind::compressed, true, false};
      break;
    case LevelKind::compressed:
      p = {params.ordered, params.unique, false, true, true, true};
      break;
    case LevelKind::singleton:
      p = {params.ordered, true, false, true, false, true};
      break;
    case LevelKind::squeezed:
      p = {true, true, false, false, true, true};
      break;
    case LevelKind::sliced:
      p = {true, true, true, false, true, false};
      break;
    case LevelKind::banded:
      p = {true, true, false, false, true, true};
      break;
    case LevelKind::offset:
      p = {true, true, false, false, true, false};
      break;
  }
  return p;
}

LevelProperties level_properties(const TensorStorage& t, std::size_t l) {
  std::optional<LevelKind> next;
  if (l + 1 < t.levels.size()) next = t.levels[l + 1].kind;
  return level_properties(t.levels[l].kind, t.levels[l].params, next);
}

std::vector<int> level_canonical_vars(const TensorStorage& t) {
  std::vector<int> canon(t.levels.size(), -1);
  for (std::size_t d = 0; d < t.projection.size(); ++d) {
    canon[static_cast<std::size_t>(t.projection[d])] = static_cast<int>(d);
  }
  return canon;
}

CanonicalTensor to_canonical(const TensorStorage& t) {
  std::vector<Entry> entries;
  Coord c(t.order());
  walk_leaves(t, [&](std::span<const Index> lc, Index, double v) {
    if (v == 0.0) return;
    project(t, lc, c);
    entries.push_back({c, v});
  });
  return canonicalize(std::move(entries), t.dims, DupPolicy::sum);
}

TensorStorage coo_storage(std::vector<Index> dims, std::span<const Entry> entries) {
  TensorStorage t;
  t.format = "coo";
  t.dims = std::move(dims);
  const std::size_t order = t.dims.size();
  const auto n = static_cast<Index>(entries.size());
  for (std::size_t d = 0; d < order; ++d) {
    t.projection.push_back(static_cast<int>(d));
    LevelStorage L;
    L.kind = d == 0 ? LevelKind::compressed : LevelKind::singleton;
    if (d == 0) {
      L.params.unique = false;
      L.pos = {0, n};
    }
    L.crd.reserve(entries.size());
    for (const auto& e : entries) {
      if (e.coord.size() != order) throw Error(Errc::DimMismatch, "entry order mismatch");
      if (e.coord[d] < 0 || e.coord[d] >= t.dims[d]) {
        throw Error(Errc::CoordOutOfRange, "coordinate outside dims");
      }
      L.crd.push_back(e.coord[d]);
    }
    t.levels.push_back(std::move(L));
  }
  for (const auto& e : entries) t.values.push_back(e.value);

  std::vector<const Coord*> sorted;
  for (const auto& e : entries) sorted.push_back(&e.coord);
  std::sort(sorted.begin(), sorted.end(), [](const Coord* a, const Coord* b) { return *a < *b; });
  t.unique_coords = std::adjacent_find(sorted.begin(), sorted.end(), [](const Coord* a, const Coord* b) {
                      return *a == *b;
                    }) == sorted.end();
  refresh_order_flags(t);
  return t;
}

void refresh_order_flags(TensorStorage& t) {
  for (auto& L : t.levels) {
    if (L.kind != LevelKind::compressed) continue;
    bool ordered = true;
    for (std::size_t s = 0; s + 1 < L.pos.size() && ordered; ++s) {
      for (Index p = L.pos[s] + 1; p < L.pos[s + 1]; ++p) {
        const auto q = static_cast<std::size_t>(p);
        if (L.crd[q - 1] > L.crd[q] || (L.params.unique && L.crd[q - 1] == L.crd[q])) {
          ordered = false;
          break;
        }
      }
    }
    L.params.ordered = ordered;
  }
}

void validate_storage(const TensorStorage& t) {
  if (t.projection.size() != t.dims.size()) invalid("projection does not cover every dimension");
  for (int l : t.projection) {
    if (l < 0 || static_cast<std::size_t>(l) >= t.levels.size()) invalid("projection out of range");
  }
  Index size = 1;
  for (std::size_t l = 0; l < t.levels.size(); ++l) {
    const LevelStorage& L = t.levels[l];
    const auto sz = static_cast<std::size_t>(size);
    const std::string where = "level " + std::to_string(l) + ": ";
    switch (L.kind) {
      case LevelKind::dense:
        if (L.params.size < 0) invalid(where + "negative size");
        if (L.params.block >= static_cast<int>(l)) invalid(where + "block must name an outer level");
        size *= L.params.size;
        break;
      case LevelKind::compressed:
      case LevelKind::banded:
        if (L.pos.size() != sz + 1 || L.pos[0] != 0) invalid(where + "pos has wrong shape");
        for (std::size_t s = 0; s < sz; ++s) {
          if (L.pos[s] > L.pos[s + 1]) invalid(where + "pos decreases");
        }
        if (L.kind == LevelKind::compressed) {
          if (static_cast<std::size_t>(L.pos.back()) != L.crd.size()) {
            invalid(where + "pos does not end at crd length");
          }
        } else if (L.lo.size() != sz) {
          invalid(where + "lo has wrong length");
        }
        size = L.pos.back();
        break;
      case LevelKind::singleton:
        if (L.crd.size() != sz) invalid(where + "crd has wrong length");
        break;
      case LevelKind::squeezed:
        for (std::size_t k = 1; k < L.perm.size(); ++k) {
          if (L.perm[k - 1] >= L.perm[k]) invalid(where + "perm not strictly increasing");
        }
        size *= static_cast<Index>(L.perm.size());
        break;
      case LevelKind::sliced:
        if (L.params.size < 0) invalid(where + "negative slice count");
        size *= L.params.size;
        break;
      case LevelKind::offset:
        if (L.params.base < 0 || L.params.delta < 0 || L.params.base >= static_cast<int>(l) ||
            L.params.delta >= static_cast<int>(l)) {
          invalid(where + "offset operands must be outer levels");
        }
        break;
    }
  }
  if (!t.levels.empty() && static_cast<std::size_t>(size) != t.values.size()) {
    invalid("values length " + std::to_string(t.values.size()) + " does not match level size " +
            std::to_string(size));
  }
}

std::vector<int> SourceProfile::grouped_prefix() const {
  std::vector<int> out;
  for (const auto& L : levels) {
    if (L.canonical_var < 0 || !L.props.ordered) break;
    out.push_back(L.canonical_var);
    if (!L.props.unique) break;
  }
  return out;
}

SourceProfile profile_of(const TensorStorage& t) {
  SourceProfile p;
  const auto canon = level_canonical_vars(t);
  for (std::size_t l = 0; l < t.levels.size(); ++l) {
    p.levels.push_back({t.levels[l].kind, level_properties(t, l), canon[l]});
  }
  p.unique_coords = t.unique_coords;
  // a stored zero makes child counts overstate the nonzeros below a level
  if (std::find(t.values.begin(), t.values.end(), 0.0) != t.values.end()) {
    for (auto& L : p.levels) L.props.stores_only_nonzeros = false;
  }
  return p;
}

}  // namespace tmorph
