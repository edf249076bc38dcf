#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tensormorph/tensor.hpp"

namespace tmorph {

// ---------------------------------------------------------------------------
// Integer index expressions
// ---------------------------------------------------------------------------

enum class ExprOp {
  constant,
  var,
  param,
  counter,
  add,
  sub,
  mul,
  div,
  mod,
  shl,
  shr,
  band,
  bor,
  bxor,
  let,
  morton,
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable expression node. `let` nodes hold {bound, body}; `morton` nodes
/// hold the coordinates to interleave; binary nodes hold {lhs, rhs}.
struct Expr {
  ExprOp op = ExprOp::constant;
  Index value = 0;
  std::string name;
  int slot = -1;     // variable slot once resolved, -1 before
  int counter = -1;  // counter id for ExprOp::counter
  std::vector<ExprPtr> args;
};

ExprPtr make_const(Index v);
ExprPtr make_var(std::string name, int slot = -1);
ExprPtr make_binary(ExprOp op, ExprPtr lhs, ExprPtr rhs);
ExprPtr make_counter(int id, std::string label);

bool is_binary(ExprOp op);
std::string to_string(const Expr& e);
inline std::string to_string(const ExprPtr& e) { return to_string(*e); }

/// Replace free variables by name. Let-bound names shadow replacements.
ExprPtr substitute(const ExprPtr& e, const std::map<std::string, ExprPtr>& repl);
/// Expand every let into its body.
ExprPtr inline_lets(const ExprPtr& e);
/// Fold constant subtrees and simple additive identities.
ExprPtr fold_constants(const ExprPtr& e);
/// Assign slots to variables: free vars use `slots` (missing names throw
/// UnboundVariable); let-bound vars get fresh slots starting at `next_slot`.
ExprPtr resolve_slots(const ExprPtr& e, const std::map<std::string, int>& slots, int& next_slot);

void collect_free_vars(const Expr& e, std::vector<std::string>& out);
bool has_counter(const Expr& e);
void collect_counters(const Expr& e, std::vector<int>& out);
bool is_var(const Expr& e, std::string_view name);
bool structurally_equal(const Expr& a, const Expr& b);
std::size_t count_bitwise_ops(const Expr& e);
bool has_morton(const Expr& e);

// ---------------------------------------------------------------------------
// Remapping programs
// ---------------------------------------------------------------------------

struct CounterSpec {
  std::vector<std::string> key_vars;
  /// Key components with lets expanded, expressed over source variables.
  std::vector<ExprPtr> key_exprs;
};

enum class CounterMode { keyed_table, scalar_reuse };

class RemapProgram {
 public:
  RemapProgram() = default;
  RemapProgram(std::string text, std::vector<std::string> src_vars, std::vector<ExprPtr> dst_exprs,
               std::vector<std::string> params, std::vector<CounterSpec> counters);

  const std::string& text() const { return text_; }
  const std::vector<std::string>& src_vars() const { return src_vars_; }
  const std::vector<ExprPtr>& dst_exprs() const { return dst_exprs_; }
  const std::vector<std::string>& params() const { return params_; }
  const std::vector<CounterSpec>& counters() const { return counters_; }
  std::size_t src_arity() const { return src_vars_.size(); }
  std::size_t dst_arity() const { return dst_exprs_.size(); }

  /// Destination expression with lets expanded (params left symbolic unless
  /// the program is bound).
  const ExprPtr& dst_inlined(std::size_t d) const { return inlined_[d]; }
  /// Name carried by a destination component: the variable itself, or the
  /// let variable a chain evaluates to; empty when unnamed.
  const std::vector<std::string>& dim_names() const { return dim_names_; }
  /// Destination position holding source variable `s` verbatim, if any.
  std::optional<std::size_t> dst_of_src(std::size_t s) const;
  bool is_identity() const;
  bool expensive() const;
  bool bound() const { return bound_; }

  /// Substitute parameter values. Division and modulo denominators must
  /// then be positive constants.
  RemapProgram bind(const std::map<std::string, Index>& values) const;

 private:
  void derive();

  std::string text_;
  std::vector<std::string> src_vars_;
  std::vector<ExprPtr> dst_exprs_;
  std::vector<std::string> params_;
  std::vector<CounterSpec> counters_;
  std::vector<ExprPtr> inlined_;
  std::vector<std::string> dim_names_;
  bool bound_ = false;
};

/// Parse coordinate remapping notation, e.g. "(i,j) -> (k=#i in k,i,j)".
/// Identifiers listed in `params` are free parameters bound later.
RemapProgram parse_remap(std::string_view text, std::span<const std::string> params = {});

// ---------------------------------------------------------------------------
// Counters and evaluation
// ---------------------------------------------------------------------------

class CounterState {
 public:
  CounterState() = default;
  /// `key_extents[c]`, when present, lets counter `c` use a dense table.
  explicit CounterState(std::vector<CounterMode> modes,
                        std::vector<std::optional<std::vector<DimBounds>>> key_extents = {});

  std::size_t size() const { return slots_.size(); }
  CounterMode mode(std::size_t c) const { return slots_[c].mode; }
  /// Current count for `key`, then increments it.
  Index next(std::size_t c, std::span<const Index> key);

 private:
  struct KeyHash {
    std::size_t operator()(const Coord& k) const noexcept;
  };
  struct Slot {
    CounterMode mode = CounterMode::keyed_table;
    std::unordered_map<Coord, Index, KeyHash> table;
    std::vector<Index> dense;
    std::vector<DimBounds> dense_bounds;
    Index scalar = 0;
    Coord last_key;
    bool has_last = false;
  };
  std::vector<Slot> slots_;
};

/// Evaluation context: variable slots plus per-nonzero counter values.
/// Counters referenced several times for one nonzero yield a single value.
class EvalContext {
 public:
  EvalContext(std::size_t slot_count, const std::vector<CounterSpec>* counters,
              CounterState* state, const std::map<std::string, int>& key_slots);

  std::span<Index> slots() { return slots_; }
  void begin_nonzero();
  Index counter_value(int id);
  Index eval(const Expr& e);

 private:
  std::vector<Index> slots_;
  const std::vector<CounterSpec>* counters_ = nullptr;
  CounterState* state_ = nullptr;
  std::vector<std::vector<ExprPtr>> keys_;
  std::vector<Index> cache_;
  std::vector<char> cached_;
  Coord key_buf_;
};

/// Compiled evaluator for a bound program.
class RemapEvaluator {
 public:
  RemapEvaluator(const RemapProgram& bound_program, CounterState& state);
  void eval(std::span<const Index> coord, std::span<Index> out);
  Coord eval(std::span<const Index> coord);

 private:
  std::vector<ExprPtr> exprs_;
  std::unique_ptr<EvalContext> ctx_;
  std::size_t src_arity_;
};

Coord eval_remap(const RemapProgram& prog, const std::map<std::string, Index>& params,
                 std::span<const Index> coord, CounterState& state);

/// Interleave `bits` low bits of every coordinate; coordinate 0 supplies the
/// least significant bit of each group.
Index morton_code(std::span<const Index> coords, int bits);

/// `grouped_prefix` lists source variables, outermost first, over which the
/// source iteration visits nonzeros in nondecreasing grouped order.
CounterMode choose_counter_mode(const CounterSpec& counter,
                                std::span<const std::string> grouped_prefix);

// ---------------------------------------------------------------------------
// Interval bounds
// ---------------------------------------------------------------------------

/// Bounds of a destination expression over canonical ranges [0, dims[d]).
/// Counter values range over [0, prod(non-key extents) - 1].
DimBounds expr_bounds(const Expr& e, const RemapProgram& prog,
                      const std::map<std::string, DimBounds>& vars,
                      std::span<const Index> dims);
std::vector<DimBounds> remapped_bounds(const RemapProgram& bound_prog,
                                       std::span<const Index> dims);

}  // namespace tmorph
