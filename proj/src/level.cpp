#include "tensormorph/level.hpp"

#include <algorithm>
#include <limits>

#include "tensormorph/error.hpp"

namespace tmorph {

LevelFormat::LevelFormat(LevelStorage& storage, LevelContext ctx) : s_(storage), ctx_(ctx) {}

void LevelFormat::protocol(const std::string& what, Errc code) const {
  const std::string msg = "level " + std::to_string(ctx_.level) + " (" +
                          std::string(level_kind_name(s_.kind)) + "): " + what;
  if (ctx_.log) ctx_.log->violation(msg);
  throw Error(code, msg);
}

void LevelFormat::require(bool ok, const char* call) const {
  if (!ok) protocol(std::string(call) + " called out of protocol");
}

const QueryResult& LevelFormat::query(AggKind kind) const {
  const QueryResult* r = ctx_.queries ? ctx_.queries->find(kind) : nullptr;
  if (!r) {
    throw Error(Errc::MissingQueryResult, "level " + std::to_string(ctx_.level) + " needs a " +
                                              std::string(agg_kind_name(kind)) + " query");
  }
  return *r;
}

Index LevelFormat::get_size(Index sz_parent) const {
  if (sz_parent < 0) throw Error(Errc::ParentPosOutOfRange, "negative parent size");
  return do_get_size(sz_parent);
}

void LevelFormat::unseq_init_edges(Index sz_parent) {
  require(needs_edges() && phase_ == Phase::fresh, "unseq_init_edges");
  sz_parent_ = sz_parent;
  phase_ = Phase::edges_unseq;
  do_init_edges(sz_parent);
}

void LevelFormat::unseq_insert_edges(Index parent_pos, Index count) {
  if (phase_ == Phase::edges_done) protocol("edge inserted after finalize", Errc::InsertAfterFinalize);
  require(phase_ == Phase::edges_unseq, "unseq_insert_edges");
  if (parent_pos < 0 || parent_pos >= sz_parent_) {
    throw Error(Errc::ParentPosOutOfRange, "parent position " + std::to_string(parent_pos));
  }
  do_insert_edges(parent_pos, count, false);
}

void LevelFormat::unseq_finalize_edges() {
  require(phase_ == Phase::edges_unseq, "unseq_finalize_edges");
  do_finalize_edges(false);
  phase_ = Phase::edges_done;
}

void LevelFormat::seq_init_edges(Index sz_parent) {
  require(needs_edges() && phase_ == Phase::fresh, "seq_init_edges");
  sz_parent_ = sz_parent;
  last_parent_ = -1;
  phase_ = Phase::edges_seq;
  do_init_edges(sz_parent);
}

void LevelFormat::seq_insert_edges(Index parent_pos, Index count) {
  require(phase_ == Phase::edges_seq, "seq_insert_edges");
  if (parent_pos < 0 || parent_pos >= sz_parent_) {
    throw Error(Errc::ParentPosOutOfRange, "parent position " + std::to_string(parent_pos));
  }
  if (parent_pos <= last_parent_) {
    protocol("parent " + std::to_string(parent_pos) + " after " + std::to_string(last_parent_),
             Errc::OutOfOrderParent);
  }
  do_insert_edges(parent_pos, count, true);
  last_parent_ = parent_pos;
}

Index LevelFormat::edge_count(std::span<const Index>) const {
  protocol("level has no edges to count");
}

void LevelFormat::init_coords(Index sz_parent) {
  if (needs_edges()) {
    require(phase_ == Phase::edges_done || phase_ == Phase::edges_seq, "init_coords");
    if (sz_parent != sz_parent_) protocol("parent size changed after edge insertion");
    if (phase_ == Phase::edges_seq) do_finalize_edges(true);
  } else {
    require(phase_ == Phase::fresh, "init_coords");
    sz_parent_ = sz_parent;
  }
  phase_ = Phase::coords;
  do_init_coords(sz_parent);
}

void LevelFormat::init_pos() {
  require(phase_ == Phase::coords, "init_pos");
  phase_ = Phase::inserting;
  do_init_pos();
}

Index LevelFormat::get_pos(Index parent_pos, std::span<const Index> coords) {
  require(phase_ == Phase::inserting && !uses_yield(), "get_pos");
  return do_get_pos(parent_pos, coords);
}

Index LevelFormat::yield_pos(Index parent_pos, std::span<const Index> coords) {
  require(phase_ == Phase::inserting && uses_yield(), "yield_pos");
  if (parent_pos < 0 || parent_pos >= sz_parent_) {
    throw Error(Errc::ParentPosOutOfRange, "parent position " + std::to_string(parent_pos));
  }
  return do_yield_pos(parent_pos, coords);
}

void LevelFormat::insert_coord(Index parent_pos, Index pos, std::span<const Index> coords) {
  if (phase_ == Phase::done) protocol("coordinate inserted after finalize", Errc::InsertAfterFinalize);
  require(phase_ == Phase::inserting, "insert_coord");
  do_insert_coord(parent_pos, pos, coords);
}

void LevelFormat::finalize_pos() {
  require(phase_ == Phase::inserting, "finalize_pos");
  do_finalize_pos();
  phase_ = Phase::done;
}

std::optional<Index> LevelFormat::locate(Index parent_pos, std::span<const Index> coords) const {
  if (!properties().has_locate) {
    throw Error(Errc::NoLocateCapability,
                std::string(level_kind_name(s_.kind)) + " levels cannot locate coordinates");
  }
  if (phase_ != Phase::coords && phase_ != Phase::inserting && phase_ != Phase::done) {
    throw Error(Errc::NotYetAssembled, "locate before coordinates are initialized");
  }
  return do_locate(parent_pos, coords);
}

Index LevelFormat::do_get_pos(Index, std::span<const Index>) {
  protocol("get_pos unsupported");
}

Index LevelFormat::do_yield_pos(Index, std::span<const Index>) {
  protocol("yield_pos unsupported");
}

std::optional<Index> LevelFormat::do_locate(Index, std::span<const Index>) const {
  throw Error(Errc::NoLocateCapability, "locate unsupported");
}

namespace {

[[noreturn]] void bad_pos(const std::string& what) { throw Error(Errc::PosOutOfRange, what); }

Index checked_mul(Index a, Index b) {
  if (a != 0 && b > (Index{1} << 56) / a) throw Error(Errc::ExtentOverflow, "level size overflow");
  return a * b;
}

// -- dense ------------------------------------------------------------------

class Dense final : public LevelFormat {
 public:
  Dense(LevelStorage& s, LevelContext ctx) : LevelFormat(s, ctx) {
    if (s_.params.size <= 0) {
      if (s_.params.block >= 0) throw Error(Errc::ValidationFailed, "blocked dense level needs a size");
      s_.params.size = std::max<Index>(ctx_.bounds.extent(), 0);
      s_.params.lower = ctx_.bounds.lower;
    }
  }
  LevelProperties properties() const override {
    return level_properties(LevelKind::dense, s_.params, std::nullopt);
  }

 protected:
  Index do_get_size(Index sz) const override { return checked_mul(sz, s_.params.size); }
  std::optional<Index> local(std::span<const Index> coords) const {
    const Index base = s_.params.block >= 0
                           ? coords[static_cast<std::size_t>(s_.params.block)] * s_.params.size
                           : s_.params.lower;
    const Index k = coord(coords) - base;
    if (k < 0 || k >= s_.params.size) return std::nullopt;
    return k;
  }
  Index do_get_pos(Index parent, std::span<const Index> coords) override {
    auto k = local(coords);
    if (!k) bad_pos("dense coordinate " + std::to_string(coord(coords)) + " outside level");
    return parent * s_.params.size + *k;
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    auto k = local(coords);
    if (!k) return std::nullopt;
    return parent * s_.params.size + *k;
  }
};

// -- compressed ---------------------------------------------------------------

class Compressed final : public LevelFormat {
 public:
  using LevelFormat::LevelFormat;
  LevelProperties properties() const override {
    return level_properties(LevelKind::compressed, s_.params, std::nullopt);
  }
  bool needs_edges() const override { return true; }
  bool uses_yield() const override { return true; }
  bool stores_coords() const override { return true; }

  Index edge_count(std::span<const Index> parent_coords) const override {
    const QueryResult& r = query(AggKind::count);
    return r.raw_at(parent_coords.first(r.bounds.size()));
  }

 protected:
  Index do_get_size(Index sz) const override {
    if (phase_ == Phase::fresh || phase_ == Phase::edges_unseq || phase_ == Phase::edges_seq ||
        static_cast<Index>(s_.pos.size()) != sz + 1) {
      throw Error(Errc::NotYetAssembled, "compressed level size before edge finalization");
    }
    return s_.pos.back();
  }
  void do_init_edges(Index sz) override {
    s_.pos.assign(static_cast<std::size_t>(sz) + 1, 0);
    running_ = 0;
    filled_ = 0;
  }
  void do_insert_edges(Index parent, Index count, bool sequenced) override {
    if (count < 0) throw Error(Errc::ValidationFailed, "negative edge count");
    const auto p = static_cast<std::size_t>(parent);
    if (!sequenced) {
      s_.pos[p + 1] += count;
      return;
    }
    for (; filled_ < p; ++filled_) s_.pos[filled_ + 1] = running_;
    running_ += count;
    s_.pos[p + 1] = running_;
    filled_ = p + 1;
  }
  void do_finalize_edges(bool sequenced) override {
    if (sequenced) {
      for (; filled_ + 1 < s_.pos.size(); ++filled_) s_.pos[filled_ + 1] = running_;
      return;
    }
    for (std::size_t k = 1; k < s_.pos.size(); ++k) s_.pos[k] += s_.pos[k - 1];
  }
  void do_init_coords(Index) override {
    s_.crd.assign(static_cast<std::size_t>(s_.pos.back()), 0);
    written_.assign(s_.crd.size(), 0);
  }
  void do_init_pos() override { cursor_ = s_.pos; }
  Index do_yield_pos(Index parent, std::span<const Index>) override {
    const auto p = static_cast<std::size_t>(parent);
    if (cursor_[p] >= s_.pos[p + 1]) {
      throw Error(Errc::SlotExhausted, "no slot left below parent " + std::to_string(parent));
    }
    return cursor_[p]++;
  }
  void do_insert_coord(Index parent, Index pos, std::span<const Index> coords) override {
    const auto p = static_cast<std::size_t>(parent);
    if (parent < 0 || p + 1 >= s_.pos.size() || pos < s_.pos[p] || pos >= s_.pos[p + 1]) {
      bad_pos("position " + std::to_string(pos) + " outside parent " + std::to_string(parent));
    }
    auto& w = written_[static_cast<std::size_t>(pos)];
    if (w) protocol("crd slot " + std::to_string(pos) + " written twice", Errc::DuplicateForbidden);
    w = 1;
    s_.crd[static_cast<std::size_t>(pos)] = coord(coords);
  }
  void do_finalize_pos() override {
    const auto unwritten = std::count(written_.begin(), written_.end(), 0);
    cursor_.clear();
    written_.clear();
    if (unwritten) protocol(std::to_string(unwritten) + " crd slots never written");
    sorted_ = true;
    for (std::size_t p = 0; p + 1 < s_.pos.size() && sorted_; ++p) {
      sorted_ = std::is_sorted(s_.crd.begin() + s_.pos[p], s_.crd.begin() + s_.pos[p + 1]);
    }
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    if (phase_ != Phase::done) throw Error(Errc::NotYetAssembled, "compressed locate before assembly");
    const auto p = static_cast<std::size_t>(parent);
    const auto first = s_.crd.begin() + s_.pos[p];
    const auto last = s_.crd.begin() + s_.pos[p + 1];
    const Index c = coord(coords);
    auto it = sorted_ ? std::lower_bound(first, last, c) : std::find(first, last, c);
    if (it == last || *it != c) return std::nullopt;
    return static_cast<Index>(it - s_.crd.begin());
  }

 private:
  Index running_ = 0;
  std::size_t filled_ = 0;
  std::vector<Index> cursor_;
  std::vector<char> written_;
  bool sorted_ = false;
};

// -- singleton ----------------------------------------------------------------

class Singleton final : public LevelFormat {
 public:
  using LevelFormat::LevelFormat;
  LevelProperties properties() const override {
    return level_properties(LevelKind::singleton, s_.params, std::nullopt);
  }
  bool stores_coords() const override { return true; }

 protected:
  Index do_get_size(Index sz) const override { return sz; }
  void do_init_coords(Index sz) override { s_.crd.assign(static_cast<std::size_t>(sz), -1); }
  Index do_get_pos(Index parent, std::span<const Index>) override { return parent; }
  void do_insert_coord(Index parent, Index pos, std::span<const Index> coords) override {
    if (pos != parent || pos < 0 || pos >= static_cast<Index>(s_.crd.size())) {
      bad_pos("singleton position " + std::to_string(pos));
    }
    Index& slot = s_.crd[static_cast<std::size_t>(pos)];
    const Index c = coord(coords);
    if (slot != -1 && slot != c) {
      protocol("two coordinates for singleton slot " + std::to_string(pos), Errc::DuplicateForbidden);
    }
    slot = c;
  }
};

// -- squeezed -----------------------------------------------------------------

class Squeezed final : public LevelFormat {
 public:
  using LevelFormat::LevelFormat;
  LevelProperties properties() const override {
    return level_properties(LevelKind::squeezed, s_.params, std::nullopt);
  }

 protected:
  Index do_get_size(Index sz) const override {
    if (phase_ == Phase::fresh) throw Error(Errc::NotYetAssembled, "squeezed size before init_coords");
    return checked_mul(sz, static_cast<Index>(s_.perm.size()));
  }
  void do_init_coords(Index) override {
    const QueryResult& r = query(AggKind::id);
    if (r.bounds.size() != 1) {
      throw Error(Errc::ValidationFailed, "squeezed level needs an id query over its own dimension");
    }
    s_.perm.clear();
    for (std::size_t k = 0; k < r.raw.size(); ++k) {
      if (r.raw[k] != 0) s_.perm.push_back(r.bounds[0].lower + static_cast<Index>(k));
    }
    s_.params.size = static_cast<Index>(s_.perm.size());
  }
  std::optional<Index> slot(std::span<const Index> coords) const {
    const Index c = coord(coords);
    auto it = std::lower_bound(s_.perm.begin(), s_.perm.end(), c);
    if (it == s_.perm.end() || *it != c) return std::nullopt;
    return static_cast<Index>(it - s_.perm.begin());
  }
  Index do_get_pos(Index parent, std::span<const Index> coords) override {
    auto k = slot(coords);
    if (!k) bad_pos("coordinate " + std::to_string(coord(coords)) + " missing from perm");
    return parent * static_cast<Index>(s_.perm.size()) + *k;
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    auto k = slot(coords);
    if (!k) return std::nullopt;
    return parent * static_cast<Index>(s_.perm.size()) + *k;
  }
};

// -- sliced -------------------------------------------------------------------

class Sliced final : public LevelFormat {
 public:
  Sliced(LevelStorage& s, LevelContext ctx) : LevelFormat(s, ctx), fixed_(s.params.size > 0) {}
  LevelProperties properties() const override {
    return level_properties(LevelKind::sliced, s_.params, std::nullopt);
  }

 protected:
  Index do_get_size(Index sz) const override {
    if (phase_ == Phase::fresh && !fixed_) {
      throw Error(Errc::NotYetAssembled, "slice count before init_coords");
    }
    return checked_mul(sz, s_.params.size);
  }
  void do_init_coords(Index) override {
    if (fixed_) return;
    const QueryResult& r = query(AggKind::max);
    Index k = 0;
    for (Index raw : r.raw) {
      if (auto v = r.decode(raw)) k = std::max(k, *v + 1);
    }
    s_.params.size = k;
  }
  Index do_get_pos(Index parent, std::span<const Index> coords) override {
    const Index k = coord(coords);
    if (k < 0 || k >= s_.params.size) {
      throw Error(Errc::SlotExhausted, "slice " + std::to_string(k) + " beyond " +
                                           std::to_string(s_.params.size) + " slices");
    }
    return parent * s_.params.size + k;
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    const Index k = coord(coords);
    if (k < 0 || k >= s_.params.size) return std::nullopt;
    return parent * s_.params.size + k;
  }

 private:
  bool fixed_;
};

// -- banded -------------------------------------------------------------------

class Banded final : public LevelFormat {
 public:
  using LevelFormat::LevelFormat;
  LevelProperties properties() const override {
    return level_properties(LevelKind::banded, s_.params, std::nullopt);
  }
  bool needs_edges() const override { return true; }

  Index edge_count(std::span<const Index> parent_coords) const override {
    auto [lo, hi] = span_of(parent_coords);
    return hi - lo + 1;
  }
  void note_parent(Index parent, std::span<const Index> parent_coords) override {
    s_.lo[static_cast<std::size_t>(parent)] = span_of(parent_coords).first;
  }

 protected:
  // Stored span of one row: every nonzero plus the diagonal when it exists.
  std::pair<Index, Index> span_of(std::span<const Index> parent_coords) const {
    const QueryResult& lb = query(AggKind::min);
    const QueryResult& ub = query(AggKind::max);
    const auto lo_v = lb.value_at(parent_coords.first(lb.bounds.size()));
    const auto hi_v = ub.value_at(parent_coords.first(ub.bounds.size()));
    const Index diag = parent_coords.empty() ? ctx_.bounds.lower : parent_coords.back();
    Index lo = std::numeric_limits<Index>::max();
    Index hi = std::numeric_limits<Index>::min();
    if (ctx_.bounds.contains(diag)) lo = hi = diag;
    if (lo_v) lo = std::min(lo, *lo_v);
    if (hi_v) hi = std::max(hi, *hi_v);
    if (lo > hi) return {0, -1};
    return {lo, hi};
  }
  Index do_get_size(Index sz) const override {
    if (phase_ == Phase::fresh || phase_ == Phase::edges_unseq || phase_ == Phase::edges_seq ||
        static_cast<Index>(s_.pos.size()) != sz + 1) {
      throw Error(Errc::NotYetAssembled, "banded level size before edge finalization");
    }
    return s_.pos.back();
  }
  void do_init_edges(Index sz) override {
    s_.pos.assign(static_cast<std::size_t>(sz) + 1, 0);
    s_.lo.assign(static_cast<std::size_t>(sz), 0);
    running_ = 0;
    filled_ = 0;
  }
  void do_insert_edges(Index parent, Index count, bool sequenced) override {
    const auto p = static_cast<std::size_t>(parent);
    if (!sequenced) {
      s_.pos[p + 1] += count;
      return;
    }
    for (; filled_ < p; ++filled_) s_.pos[filled_ + 1] = running_;
    running_ += count;
    s_.pos[p + 1] = running_;
    filled_ = p + 1;
  }
  void do_finalize_edges(bool sequenced) override {
    if (sequenced) {
      for (; filled_ + 1 < s_.pos.size(); ++filled_) s_.pos[filled_ + 1] = running_;
      return;
    }
    for (std::size_t k = 1; k < s_.pos.size(); ++k) s_.pos[k] += s_.pos[k - 1];
  }
  std::optional<Index> offset_of(Index parent, std::span<const Index> coords) const {
    const auto p = static_cast<std::size_t>(parent);
    const Index k = coord(coords) - s_.lo[p];
    if (k < 0 || k >= s_.pos[p + 1] - s_.pos[p]) return std::nullopt;
    return s_.pos[p] + k;
  }
  Index do_get_pos(Index parent, std::span<const Index> coords) override {
    auto p = offset_of(parent, coords);
    if (!p) bad_pos("coordinate " + std::to_string(coord(coords)) + " outside the row band");
    return *p;
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    return offset_of(parent, coords);
  }

 private:
  Index running_ = 0;
  std::size_t filled_ = 0;
};

// -- offset -------------------------------------------------------------------

class Offset final : public LevelFormat {
 public:
  using LevelFormat::LevelFormat;
  LevelProperties properties() const override {
    return level_properties(LevelKind::offset, s_.params, std::nullopt);
  }

 protected:
  bool matches(std::span<const Index> coords) const {
    return coord(coords) == coords[static_cast<std::size_t>(s_.params.base)] +
                                coords[static_cast<std::size_t>(s_.params.delta)];
  }
  Index do_get_size(Index sz) const override { return sz; }
  Index do_get_pos(Index parent, std::span<const Index> coords) override {
    if (!matches(coords)) bad_pos("coordinate does not match its offset");
    return parent;
  }
  std::optional<Index> do_locate(Index parent, std::span<const Index> coords) const override {
    if (!matches(coords)) return std::nullopt;
    return parent;
  }
};

}  // namespace

std::unique_ptr<LevelFormat> make_level_format(LevelStorage& storage, LevelContext ctx) {
  switch (storage.kind) {
    case LevelKind::dense: return std::make_unique<Dense>(storage, ctx);
    case LevelKind::compressed: return std::make_unique<Compressed>(storage, ctx);
    case LevelKind::singleton: return std::make_unique<Singleton>(storage, ctx);
    case LevelKind::squeezed: return std::make_unique<Squeezed>(storage, ctx);
    case LevelKind::sliced: return std::make_unique<Sliced>(storage, ctx);
    case LevelKind::banded: return std::make_unique<Banded>(storage, ctx);
    case LevelKind::offset: return std::make_unique<Offset>(storage, ctx);
  }
  throw Error(Errc::ValidationFailed, "unknown level kind");
}

}  // namespace tmorph
