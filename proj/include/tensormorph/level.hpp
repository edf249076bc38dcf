#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tensormorph/error.hpp"
#include "tensormorph/query.hpp"
#include "tensormorph/storage.hpp"

namespace tmorph {

/// Collects out-of-protocol level function calls.
class ProtocolLog {
 public:
  void violation(std::string what) { violations_.push_back(std::move(what)); }
  const std::vector<std::string>& violations() const { return violations_; }
  std::size_t count() const { return violations_.size(); }
  void clear() { violations_.clear(); }

 private:
  std::vector<std::string> violations_;
};

struct LevelContext {
  std::size_t level = 0;
  DimBounds bounds;                      // range of the remapped dimension
  const QueryResults* queries = nullptr;  // this level's attribute queries
  ProtocolLog* log = nullptr;
};

/// Assembly interface of one output level. Public calls check the protocol
/// (edges, then coordinates, then positions) before reaching the format.
class LevelFormat {
 public:
  LevelFormat(LevelStorage& storage, LevelContext ctx);
  virtual ~LevelFormat() = default;
  LevelFormat(const LevelFormat&) = delete;
  LevelFormat& operator=(const LevelFormat&) = delete;

  LevelKind kind() const { return s_.kind; }
  virtual LevelProperties properties() const = 0;
  virtual bool needs_edges() const { return false; }
  virtual bool uses_yield() const { return false; }
  /// Whether coordinate insertion writes anything.
  virtual bool stores_coords() const { return false; }

  Index get_size(Index sz_parent) const;

  void unseq_init_edges(Index sz_parent);
  void unseq_insert_edges(Index parent_pos, Index count);
  void unseq_finalize_edges();
  void seq_init_edges(Index sz_parent);
  void seq_insert_edges(Index parent_pos, Index count);
  /// Children this level allocates below a parent, from its query results.
  virtual Index edge_count(std::span<const Index> parent_coords) const;
  /// Called with each parent before its edges are inserted.
  virtual void note_parent(Index /*parent_pos*/, std::span<const Index> /*parent_coords*/) {}

  void init_coords(Index sz_parent);
  void init_pos();
  Index get_pos(Index parent_pos, std::span<const Index> coords);
  Index yield_pos(Index parent_pos, std::span<const Index> coords);
  void insert_coord(Index parent_pos, Index pos, std::span<const Index> coords);
  void finalize_pos();

  std::optional<Index> locate(Index parent_pos, std::span<const Index> coords) const;

 protected:
  enum class Phase { fresh, edges_unseq, edges_seq, edges_done, coords, inserting, done };

  virtual Index do_get_size(Index sz_parent) const = 0;
  virtual void do_init_edges(Index /*sz_parent*/) {}
  virtual void do_insert_edges(Index /*parent_pos*/, Index /*count*/, bool /*sequenced*/) {}
  virtual void do_finalize_edges(bool /*sequenced*/) {}
  virtual void do_init_coords(Index /*sz_parent*/) {}
  virtual void do_init_pos() {}
  virtual Index do_get_pos(Index parent_pos, std::span<const Index> coords);
  virtual Index do_yield_pos(Index parent_pos, std::span<const Index> coords);
  virtual void do_insert_coord(Index /*parent_pos*/, Index /*pos*/,
                               std::span<const Index> /*coords*/) {}
  virtual void do_finalize_pos() {}
  virtual std::optional<Index> do_locate(Index parent_pos, std::span<const Index> coords) const;

  [[noreturn]] void protocol(const std::string& what, Errc code = Errc::ProtocolViolation) const;
  void require(bool ok, const char* call) const;
  const QueryResult& query(AggKind kind) const;
  Index coord(std::span<const Index> coords) const { return coords[ctx_.level]; }

  LevelStorage& s_;
  LevelContext ctx_;
  Phase phase_ = Phase::fresh;
  Index sz_parent_ = -1;
  Index last_parent_ = -1;
};

std::unique_ptr<LevelFormat> make_level_format(LevelStorage& storage, LevelContext ctx);

}  // namespace tmorph
