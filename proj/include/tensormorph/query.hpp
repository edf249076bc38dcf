#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tensormorph/remap.hpp"
#include "tensormorph/storage.hpp"
#include "tensormorph/tensor.hpp"

namespace tmorph {

// ---------------------------------------------------------------------------
// Query AST
// ---------------------------------------------------------------------------

enum class AggKind { count, max, min, id };
std::string_view agg_kind_name(AggKind k);

struct Aggregation {
  AggKind kind = AggKind::count;
  std::vector<std::string> args;
  std::string label;
};

struct Query {
  std::vector<std::string> group_vars;
  std::vector<Aggregation> aggs;
};

/// Parse "select [i] -> count(j) as nnz, ...". When `dim_names` is given the
/// variables are also checked against the remapped dimensions.
Query parse_query(std::string_view text);
Query parse_query(std::string_view text, std::span<const std::string> dim_names);
std::string to_string(const Query& q);

/// Remapped dimension bound to each query variable. Variables that match a
/// dimension name bind to it; the rest bind, in order of first use, to the
/// unnamed dimensions from left to right.
std::map<std::string, std::size_t> bind_query_vars(const Query& q,
                                                   std::span<const std::string> dim_names);

// ---------------------------------------------------------------------------
// Concrete index notation
// ---------------------------------------------------------------------------

enum class ReduceOp { assign, add, max, bor };

struct Term;
using TermPtr = std::shared_ptr<const Term>;

/// Right-hand side operand. `width` is the number of stored children below a
/// prefix of the source's levels (B'); `map(x, e)` is e where x is nonzero.
struct Term {
  enum class Kind { access, width, map, constant };
  Kind kind = Kind::constant;
  std::string tensor;
  std::vector<ExprPtr> indices;
  std::size_t depth = 0;
  TermPtr inner;
  ExprPtr value;
  Index constant = 0;
};

struct Stmt;
using StmtPtr = std::shared_ptr<const Stmt>;

struct Stmt {
  enum class Kind { forall, assign, where };
  Kind kind = Kind::assign;
  std::string var;  // forall
  StmtPtr body;     // forall
  std::string target;
  std::vector<ExprPtr> target_indices;
  ReduceOp op = ReduceOp::assign;
  TermPtr rhs;
  StmtPtr consumer;  // where
  StmtPtr producer;  // where
};

struct TensorDecl {
  std::vector<DimBounds> bounds;
  bool temporary = false;
};

struct AggPlan {
  std::string label;
  AggKind kind = AggKind::count;
  std::vector<DimBounds> group_bounds;
  Index s = 0;  // bounds of the aggregated dimension (max/min decode)
  Index t = 0;
};

/// Lowered form of one query: one statement per aggregation.
struct QueryProgram {
  std::vector<std::string> source_vars;
  std::vector<DimBounds> source_bounds;
  std::vector<CounterSpec> counters;
  std::map<std::string, TensorDecl> tensors;
  std::vector<AggPlan> aggs;
  std::vector<StmtPtr> stmts;
};

std::string render(const Stmt& s);
std::string render(const QueryProgram& p);

/// Canonical statements over source variables. `src_bounds` gives the range
/// of each source variable; `dim_names` overrides prog.dim_names().
QueryProgram lower_to_canonical(const Query& q, const RemapProgram& bound_prog,
                                std::span<const DimBounds> src_bounds,
                                std::span<const std::string> dim_names = {});

/// Apply the rewrite rules to a fixpoint (at most 8 rounds).
QueryProgram optimize(const QueryProgram& p, const SourceProfile& src);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct QueryTrace {
  std::uint64_t passes = 0;
  std::uint64_t visits = 0;
  std::uint64_t bytes = 0;

  QueryTrace& operator+=(const QueryTrace& o) {
    passes += o.passes;
    visits += o.visits;
    bytes += o.bytes;
    return *this;
  }
};

struct QueryResult {
  AggKind kind = AggKind::count;
  std::vector<DimBounds> bounds;
  std::vector<Index> raw;
  Index s = 0;
  Index t = 0;

  std::size_t flat(std::span<const Index> coords) const;
  Index raw_at(std::span<const Index> coords) const { return raw[flat(coords)]; }
  /// Decoded value; empty groups of max/min yield nullopt.
  std::optional<Index> value_at(std::span<const Index> coords) const;
  std::optional<Index> decode(Index raw_value) const;
};

struct QueryResults {
  std::map<std::string, QueryResult> by_label;
  QueryTrace trace;

  const QueryResult& at(const std::string& label) const;
  /// First result of the given kind, in label order of the query.
  const QueryResult* find(AggKind kind) const;
  std::vector<std::string> order;
};

struct ExecOptions {
  std::vector<CounterMode> counter_modes;  // default keyed_table
  std::size_t result_cap = std::size_t{1} << 24;
};

QueryResults execute_query(const QueryProgram& p, const TensorStorage& src,
                           const ExecOptions& opts = {});
QueryResults execute_query(const QueryProgram& p, const RemappedBuffer& src,
                           const ExecOptions& opts = {});

}  // namespace tmorph
