#include "tensormorph/remap.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <set>

#include "tensormorph/error.hpp"

namespace tmorph {

// ---------------------------------------------------------------------------
// Node construction and printing
// ---------------------------------------------------------------------------

ExprPtr make_const(Index v) {
  auto e = std::make_shared<Expr>();
  e->op = ExprOp::constant;
  e->value = v;
  return e;
}

ExprPtr make_var(std::string name, int slot) {
  auto e = std::make_shared<Expr>();
  e->op = ExprOp::var;
  e->name = std::move(name);
  e->slot = slot;
  return e;
}

ExprPtr make_binary(ExprOp op, ExprPtr lhs, ExprPtr rhs) {
  auto e = std::make_shared<Expr>();
  e->op = op;
  e->args = {std::move(lhs), std::move(rhs)};
  return e;
}

ExprPtr make_counter(int id, std::string label) {
  auto e = std::make_shared<Expr>();
  e->op = ExprOp::counter;
  e->counter = id;
  e->name = std::move(label);
  return e;
}

namespace {

ExprPtr make_param(std::string name) {
  auto e = std::make_shared<Expr>();
  e->op = ExprOp::param;
  e->name = std::move(name);
  return e;
}

ExprPtr make_let(std::string name, ExprPtr bound, ExprPtr body, int slot = -1) {
  auto e = std::make_shared<Expr>();
  e->op = ExprOp::let;
  e->name = std::move(name);
  e->slot = slot;
  e->args = {std::move(bound), std::move(body)};
  return e;
}

ExprPtr with_args(const Expr& proto, std::vector<ExprPtr> args) {
  auto e = std::make_shared<Expr>(proto);
  e->args = std::move(args);
  return e;
}

int precedence(ExprOp op) {
  switch (op) {
    case ExprOp::let: return 0;
    case ExprOp::bor: return 1;
    case ExprOp::bxor: return 2;
    case ExprOp::band: return 3;
    case ExprOp::shl:
    case ExprOp::shr: return 4;
    case ExprOp::add:
    case ExprOp::sub: return 5;
    case ExprOp::mul:
    case ExprOp::div:
    case ExprOp::mod: return 6;
    default: return 7;
  }
}

const char* op_symbol(ExprOp op) {
  switch (op) {
    case ExprOp::add: return "+";
    case ExprOp::sub: return "-";
    case ExprOp::mul: return "*";
    case ExprOp::div: return "/";
    case ExprOp::mod: return "%";
    case ExprOp::shl: return "<<";
    case ExprOp::shr: return ">>";
    case ExprOp::band: return "&";
    case ExprOp::bor: return "|";
    case ExprOp::bxor: return "^";
    default: return "?";
  }
}

void print(const Expr& e, std::string& out) {
  switch (e.op) {
    case ExprOp::constant: out += std::to_string(e.value); return;
    case ExprOp::var:
    case ExprOp::param:
    case ExprOp::counter: out += e.name; return;
    case ExprOp::let:
      out += e.name + "=";
      print(*e.args[0], out);
      out += " in ";
      print(*e.args[1], out);
      return;
    case ExprOp::morton:
      out += "morton(";
      for (std::size_t k = 0; k < e.args.size(); ++k) {
        if (k) out += ",";
        print(*e.args[k], out);
      }
      out += ")";
      return;
    default: break;
  }
  const int p = precedence(e.op);
  const auto side = [&](const Expr& child, bool right) {
    const int cp = precedence(child.op);
    const bool paren = cp < p || (right && cp == p) || child.op == ExprOp::let;
    if (paren) out += "(";
    print(child, out);
    if (paren) out += ")";
  };
  side(*e.args[0], false);
  out += op_symbol(e.op);
  side(*e.args[1], true);
}

}  // namespace

bool is_binary(ExprOp op) {
  switch (op) {
    case ExprOp::add:
    case ExprOp::sub:
    case ExprOp::mul:
    case ExprOp::div:
    case ExprOp::mod:
    case ExprOp::shl:
    case ExprOp::shr:
    case ExprOp::band:
    case ExprOp::bor:
    case ExprOp::bxor: return true;
    default: return false;
  }
}

std::string to_string(const Expr& e) {
  std::string out;
  print(e, out);
  return out;
}

// ---------------------------------------------------------------------------
// Tree utilities
// ---------------------------------------------------------------------------

ExprPtr substitute(const ExprPtr& e, const std::map<std::string, ExprPtr>& repl) {
  if (repl.empty()) return e;
  if (e->op == ExprOp::var) {
    auto it = repl.find(e->name);
    return it == repl.end() ? e : it->second;
  }
  if (e->op == ExprOp::let) {
    auto bound = substitute(e->args[0], repl);
    auto inner = repl;
    inner.erase(e->name);
    return with_args(*e, {bound, substitute(e->args[1], inner)});
  }
  if (e->args.empty()) return e;
  std::vector<ExprPtr> args;
  args.reserve(e->args.size());
  for (const auto& a : e->args) args.push_back(substitute(a, repl));
  return with_args(*e, std::move(args));
}

ExprPtr inline_lets(const ExprPtr& e) {
  if (e->op == ExprOp::let) {
    auto bound = inline_lets(e->args[0]);
    return inline_lets(substitute(e->args[1], {{e->name, bound}}));
  }
  if (e->args.empty()) return e;
  std::vector<ExprPtr> args;
  for (const auto& a : e->args) args.push_back(inline_lets(a));
  return with_args(*e, std::move(args));
}

namespace {

bool is_const(const ExprPtr& e, Index* v = nullptr) {
  if (e->op != ExprOp::constant) return false;
  if (v) *v = e->value;
  return true;
}

Index apply_binary(ExprOp op, Index a, Index b) {
  switch (op) {
    case ExprOp::add: return a + b;
    case ExprOp::sub: return a - b;
    case ExprOp::mul: return a * b;
    case ExprOp::div:
      if (b <= 0) throw Error(Errc::DivisorNotPositive, "division by " + std::to_string(b));
      if (a < 0) throw Error(Errc::NegativeOperand, "negative dividend " + std::to_string(a));
      return a / b;
    case ExprOp::mod:
      if (b <= 0) throw Error(Errc::DivisorNotPositive, "modulo by " + std::to_string(b));
      if (a < 0) throw Error(Errc::NegativeOperand, "negative dividend " + std::to_string(a));
      return a % b;
    case ExprOp::shl:
      if (b < 0 || b > 62) throw Error(Errc::InvalidShift, "shift by " + std::to_string(b));
      if (a < 0) throw Error(Errc::NegativeOperand, "negative shift operand");
      return a << b;
    case ExprOp::shr:
      if (b < 0 || b > 62) throw Error(Errc::InvalidShift, "shift by " + std::to_string(b));
      if (a < 0) throw Error(Errc::NegativeOperand, "negative shift operand");
      return a >> b;
    case ExprOp::band: return a & b;
    case ExprOp::bor: return a | b;
    case ExprOp::bxor: return a ^ b;
    default: throw Error(Errc::SyntaxError, "not a binary operator");
  }
}

}  // namespace

ExprPtr fold_constants(const ExprPtr& e) {
  if (e->args.empty()) return e;
  std::vector<ExprPtr> args;
  for (const auto& a : e->args) args.push_back(fold_constants(a));
  if (!is_binary(e->op)) return with_args(*e, std::move(args));

  Index a = 0, b = 0;
  const bool ca = is_const(args[0], &a), cb = is_const(args[1], &b);
  if (ca && cb) return make_const(apply_binary(e->op, a, b));
  if (e->op == ExprOp::add) {
    if (cb && b == 0) return args[0];
    if (ca && a == 0) return args[1];
    // (x + c1) + c2  and  (x - c1) + c2
    Index inner = 0;
    if (cb && (args[0]->op == ExprOp::add || args[0]->op == ExprOp::sub) &&
        is_const(args[0]->args[1], &inner)) {
      const Index c = args[0]->op == ExprOp::add ? inner + b : b - inner;
      return fold_constants(make_binary(c >= 0 ? ExprOp::add : ExprOp::sub, args[0]->args[0],
                                        make_const(c >= 0 ? c : -c)));
    }
  }
  if (e->op == ExprOp::sub && cb) {
    if (b == 0) return args[0];
    Index inner = 0;
    if ((args[0]->op == ExprOp::add || args[0]->op == ExprOp::sub) &&
        is_const(args[0]->args[1], &inner)) {
      const Index c = args[0]->op == ExprOp::add ? inner - b : -inner - b;
      return fold_constants(make_binary(c >= 0 ? ExprOp::add : ExprOp::sub, args[0]->args[0],
                                        make_const(c >= 0 ? c : -c)));
    }
  }
  if (e->op == ExprOp::mul && ((cb && b == 1) || (ca && a == 1))) return cb ? args[0] : args[1];
  if ((e->op == ExprOp::div) && cb && b == 1) return args[0];
  return with_args(*e, std::move(args));
}

namespace {

ExprPtr resolve_impl(const ExprPtr& e, std::map<std::string, int>& scope, int& next_slot) {
  switch (e->op) {
    case ExprOp::var: {
      auto it = scope.find(e->name);
      if (it == scope.end()) throw Error(Errc::UnboundVariable, "variable '" + e->name + "'");
      return make_var(e->name, it->second);
    }
    case ExprOp::let: {
      auto bound = resolve_impl(e->args[0], scope, next_slot);
      const int slot = next_slot++;
      auto saved = scope;
      scope[e->name] = slot;
      auto body = resolve_impl(e->args[1], scope, next_slot);
      scope = std::move(saved);
      return make_let(e->name, bound, body, slot);
    }
    default: break;
  }
  if (e->args.empty()) return e;
  std::vector<ExprPtr> args;
  for (const auto& a : e->args) args.push_back(resolve_impl(a, scope, next_slot));
  return with_args(*e, std::move(args));
}

}  // namespace

ExprPtr resolve_slots(const ExprPtr& e, const std::map<std::string, int>& slots, int& next_slot) {
  auto scope = slots;
  return resolve_impl(e, scope, next_slot);
}

void collect_free_vars(const Expr& e, std::vector<std::string>& out) {
  if (e.op == ExprOp::var) {
    if (std::find(out.begin(), out.end(), e.name) == out.end()) out.push_back(e.name);
    return;
  }
  if (e.op == ExprOp::let) {
    collect_free_vars(*e.args[0], out);
    std::vector<std::string> inner;
    collect_free_vars(*e.args[1], inner);
    for (auto& v : inner) {
      if (v != e.name && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return;
  }
  for (const auto& a : e.args) collect_free_vars(*a, out);
}

bool has_counter(const Expr& e) {
  if (e.op == ExprOp::counter) return true;
  return std::any_of(e.args.begin(), e.args.end(), [](const ExprPtr& a) { return has_counter(*a); });
}

void collect_counters(const Expr& e, std::vector<int>& out) {
  if (e.op == ExprOp::counter &&
      std::find(out.begin(), out.end(), e.counter) == out.end()) {
    out.push_back(e.counter);
  }
  for (const auto& a : e.args) collect_counters(*a, out);
}

bool is_var(const Expr& e, std::string_view name) {
  return e.op == ExprOp::var && e.name == name;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.op != b.op || a.value != b.value || a.counter != b.counter) return false;
  if ((a.op == ExprOp::var || a.op == ExprOp::param || a.op == ExprOp::let) && a.name != b.name) {
    return false;
  }
  if (a.args.size() != b.args.size()) return false;
  for (std::size_t k = 0; k < a.args.size(); ++k) {
    if (!structurally_equal(*a.args[k], *b.args[k])) return false;
  }
  return true;
}

std::size_t count_bitwise_ops(const Expr& e) {
  std::size_t n = 0;
  switch (e.op) {
    case ExprOp::shl:
    case ExprOp::shr:
    case ExprOp::band:
    case ExprOp::bor:
    case ExprOp::bxor: n = 1; break;
    default: break;
  }
  for (const auto& a : e.args) n += count_bitwise_ops(*a);
  return n;
}

bool has_morton(const Expr& e) {
  if (e.op == ExprOp::morton) return true;
  return std::any_of(e.args.begin(), e.args.end(), [](const ExprPtr& a) { return has_morton(*a); });
}

// ---------------------------------------------------------------------------
// Lexer and recursive-descent parser
// ---------------------------------------------------------------------------

namespace {

enum class Tok { ident, number, punct, end };

struct Token {
  Tok kind;
  std::string text;
  std::size_t offset;
};

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> toks;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) {
        ++i;
      }
      toks.push_back({Tok::ident, std::string(src.substr(start, i - start)), start});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      toks.push_back({Tok::number, std::string(src.substr(start, i - start)), start});
    } else {
      const auto two = src.substr(i, 2);
      if (two == "->" || two == "<<" || two == ">>") {
        toks.push_back({Tok::punct, std::string(two), start});
        i += 2;
      } else if (std::string_view("(),=#+-*/%&|^[]").find(c) != std::string_view::npos) {
        toks.push_back({Tok::punct, std::string(1, c), start});
        ++i;
      } else {
        throw Error(Errc::SyntaxError,
                    "unexpected character '" + std::string(1, c) + "' at offset " +
                        std::to_string(start),
                    static_cast<std::int64_t>(start));
      }
    }
  }
  toks.push_back({Tok::end, "", src.size()});
  return toks;
}

class RemapParser {
 public:
  RemapParser(std::string_view text, std::span<const std::string> params)
      : text_(text), toks_(lex(text)), params_(params.begin(), params.end()) {}

  RemapProgram parse() {
    expect("(");
    do {
      const Token& t = take_ident();
      if (std::find(src_.begin(), src_.end(), t.text) != src_.end()) {
        fail("duplicate source variable '" + t.text + "'", t.offset);
      }
      src_.push_back(t.text);
    } while (accept(","));
    expect(")");
    expect("->");
    expect("(");
    std::vector<ExprPtr> dst;
    do {
      local_.clear();
      dst.push_back(parse_let());
    } while (accept(","));
    expect(")");
    if (peek().kind != Tok::end) fail("trailing input", peek().offset);
    if (dst.size() < src_.size()) {
      throw Error(Errc::ArityError,
                  "destination has " + std::to_string(dst.size()) + " components, source has " +
                      std::to_string(src_.size()));
    }
    return RemapProgram(std::string(text_), src_, std::move(dst), params_, std::move(counters_));
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool is_punct(const Token& t, std::string_view p) const {
    return t.kind == Tok::punct && t.text == p;
  }
  bool accept(std::string_view p) {
    if (is_punct(peek(), p)) {
      ++pos_;
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& msg, std::size_t offset) const {
    throw Error(Errc::SyntaxError, msg + " at offset " + std::to_string(offset),
                static_cast<std::int64_t>(offset));
  }
  void expect(std::string_view p) {
    if (!accept(p)) {
      fail("expected '" + std::string(p) + "' but found '" + peek().text + "'", peek().offset);
    }
  }
  const Token& take_ident() {
    const Token& t = peek();
    if (t.kind != Tok::ident || t.text == "in") fail("expected identifier", t.offset);
    ++pos_;
    return t;
  }

  // <ivar_let> := { <var> '=' <ivar_expr> 'in' } <ivar_expr>
  ExprPtr parse_let() {
    if (peek().kind == Tok::ident && is_punct(peek(1), "=")) {
      const Token name = take_ident();
      expect("=");
      auto bound = parse_expr();
      const Token& kw = peek();
      if (kw.kind != Tok::ident || kw.text != "in") fail("expected 'in'", kw.offset);
      ++pos_;
      auto bound_inlined = inline_lets(bound);
      local_.emplace_back(name.text, bound_inlined);
      auto body = parse_let();
      // lets stay visible to later destination components
      tuple_[name.text] = bound_inlined;
      return make_let(name.text, bound, body);
    }
    return parse_expr();
  }

  ExprPtr parse_expr() { return parse_level(1); }

  // Binary levels 1..6: | ^ & shifts +- */%
  ExprPtr parse_level(int level) {
    if (level > 6) return parse_factor();
    auto lhs = parse_level(level + 1);
    for (;;) {
      const Token& t = peek();
      if (t.kind != Tok::punct) return lhs;
      std::optional<ExprOp> op;
      switch (level) {
        case 1: if (t.text == "|") op = ExprOp::bor; break;
        case 2: if (t.text == "^") op = ExprOp::bxor; break;
        case 3: if (t.text == "&") op = ExprOp::band; break;
        case 4:
          if (t.text == "<<") op = ExprOp::shl;
          if (t.text == ">>") op = ExprOp::shr;
          break;
        case 5:
          if (t.text == "+") op = ExprOp::add;
          if (t.text == "-") op = ExprOp::sub;
          break;
        case 6:
          if (t.text == "*") op = ExprOp::mul;
          if (t.text == "/") op = ExprOp::div;
          if (t.text == "%") op = ExprOp::mod;
          break;
      }
      if (!op) return lhs;
      ++pos_;
      lhs = make_binary(*op, lhs, parse_level(level + 1));
    }
  }

  ExprPtr parse_factor() {
    const Token& t = peek();
    if (accept("(")) {
      auto e = parse_expr();
      expect(")");
      return e;
    }
    if (t.kind == Tok::number) {
      ++pos_;
      try {
        return make_const(std::stoll(t.text));
      } catch (const std::out_of_range&) {
        fail("integer literal out of range", t.offset);
      }
    }
    if (accept("#")) return parse_counter();
    if (t.kind == Tok::ident && t.text != "in") {
      ++pos_;
      if (t.text == "morton" && is_punct(peek(), "(")) return parse_morton(t.offset);
      return reference(t.text, t.offset);
    }
    fail("expected expression but found '" + t.text + "'", t.offset);
  }

  ExprPtr parse_morton(std::size_t offset) {
    expect("(");
    auto e = std::make_shared<Expr>();
    e->op = ExprOp::morton;
    do e->args.push_back(parse_expr());
    while (accept(","));
    expect(")");
    if (e->args.size() > 63) fail("too many morton operands", offset);
    return e;
  }

  ExprPtr parse_counter() {
    CounterSpec spec;
    std::string label = "#";
    while (peek().kind == Tok::ident && peek().text != "in") {
      const Token& t = peek();
      ++pos_;
      spec.key_vars.push_back(t.text);
      spec.key_exprs.push_back(key_expr(t.text, t.offset));
      label += (spec.key_vars.size() > 1 ? " " : "") + t.text;
    }
    // counters with the same key share one table
    for (std::size_t c = 0; c < counters_.size(); ++c) {
      if (counters_[c].key_vars == spec.key_vars) {
        bool same = true;
        for (std::size_t k = 0; k < spec.key_exprs.size(); ++k) {
          same = same && structurally_equal(*counters_[c].key_exprs[k], *spec.key_exprs[k]);
        }
        if (same) return make_counter(static_cast<int>(c), label);
      }
    }
    counters_.push_back(std::move(spec));
    return make_counter(static_cast<int>(counters_.size() - 1), label);
  }

  ExprPtr key_expr(const std::string& name, std::size_t offset) {
    for (auto it = local_.rbegin(); it != local_.rend(); ++it) {
      if (it->first == name) return it->second;
    }
    if (std::find(src_.begin(), src_.end(), name) != src_.end()) return make_var(name);
    if (auto it = tuple_.find(name); it != tuple_.end()) return it->second;
    throw Error(Errc::UnboundVariable,
                "counter key '" + name + "' at offset " + std::to_string(offset),
                static_cast<std::int64_t>(offset));
  }

  ExprPtr reference(const std::string& name, std::size_t offset) {
    for (auto it = local_.rbegin(); it != local_.rend(); ++it) {
      if (it->first == name) return make_var(name);
    }
    if (std::find(src_.begin(), src_.end(), name) != src_.end()) return make_var(name);
    if (auto it = tuple_.find(name); it != tuple_.end()) return it->second;
    if (std::find(params_.begin(), params_.end(), name) != params_.end()) return make_param(name);
    throw Error(Errc::UnboundVariable,
                "'" + name + "' at offset " + std::to_string(offset),
                static_cast<std::int64_t>(offset));
  }

  std::string_view text_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::vector<std::string> params_;
  std::vector<std::string> src_;
  std::vector<std::pair<std::string, ExprPtr>> local_;
  std::map<std::string, ExprPtr> tuple_;
  std::vector<CounterSpec> counters_;
};

ExprPtr replace_params(const ExprPtr& e, const std::map<std::string, Index>& values) {
  if (e->op == ExprOp::param) {
    auto it = values.find(e->name);
    if (it == values.end()) throw Error(Errc::MissingParameter, "parameter '" + e->name + "'");
    return make_const(it->second);
  }
  if (e->args.empty()) return e;
  std::vector<ExprPtr> args;
  for (const auto& a : e->args) args.push_back(replace_params(a, values));
  return with_args(*e, std::move(args));
}

void check_divisors(const Expr& e) {
  if ((e.op == ExprOp::div || e.op == ExprOp::mod) && e.args[1]->op == ExprOp::constant &&
      e.args[1]->value <= 0) {
    throw Error(Errc::DivisorNotPositive, "denominator " + std::to_string(e.args[1]->value));
  }
  for (const auto& a : e.args) check_divisors(*a);
}

}  // namespace

RemapProgram parse_remap(std::string_view text, std::span<const std::string> params) {
  return RemapParser(text, params).parse();
}

// ---------------------------------------------------------------------------
// RemapProgram
// ---------------------------------------------------------------------------

RemapProgram::RemapProgram(std::string text, std::vector<std::string> src_vars,
                           std::vector<ExprPtr> dst_exprs, std::vector<std::string> params,
                           std::vector<CounterSpec> counters)
    : text_(std::move(text)),
      src_vars_(std::move(src_vars)),
      dst_exprs_(std::move(dst_exprs)),
      params_(std::move(params)),
      counters_(std::move(counters)) {
  derive();
}

void RemapProgram::derive() {
  inlined_.clear();
  dim_names_.clear();
  for (const auto& e : dst_exprs_) {
    inlined_.push_back(inline_lets(e));
    std::string name;
    if (e->op == ExprOp::var) {
      name = e->name;
    } else if (e->op == ExprOp::let) {
      std::vector<std::string> chain;
      const Expr* cur = e.get();
      while (cur->op == ExprOp::let) {
        chain.push_back(cur->name);
        cur = cur->args[1].get();
      }
      if (cur->op == ExprOp::var &&
          std::find(chain.begin(), chain.end(), cur->name) != chain.end()) {
        name = cur->name;
      }
    }
    dim_names_.push_back(name);
  }
}

std::optional<std::size_t> RemapProgram::dst_of_src(std::size_t s) const {
  for (std::size_t d = 0; d < dst_exprs_.size(); ++d) {
    if (is_var(*dst_exprs_[d], src_vars_[s])) return d;
  }
  return std::nullopt;
}

bool RemapProgram::is_identity() const {
  if (dst_exprs_.size() != src_vars_.size()) return false;
  for (std::size_t d = 0; d < dst_exprs_.size(); ++d) {
    if (!is_var(*dst_exprs_[d], src_vars_[d])) return false;
  }
  return true;
}

bool RemapProgram::expensive() const {
  std::size_t bitwise = 0;
  for (const auto& e : inlined_) {
    if (has_morton(*e)) return true;
    bitwise += count_bitwise_ops(*e);
  }
  return bitwise >= 4;
}

RemapProgram RemapProgram::bind(const std::map<std::string, Index>& values) const {
  RemapProgram out = *this;
  for (auto& e : out.dst_exprs_) {
    e = replace_params(e, values);
    check_divisors(*e);
  }
  for (auto& c : out.counters_) {
    for (auto& k : c.key_exprs) k = replace_params(k, values);
  }
  out.derive();
  out.bound_ = true;
  return out;
}

// ---------------------------------------------------------------------------
// Counters and evaluation
// ---------------------------------------------------------------------------

std::size_t CounterState::KeyHash::operator()(const Coord& k) const noexcept {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (Index v : k) h = (h ^ static_cast<std::size_t>(v)) * 0x100000001b3ULL;
  return h;
}

CounterState::CounterState(std::vector<CounterMode> modes,
                           std::vector<std::optional<std::vector<DimBounds>>> key_extents) {
  slots_.resize(modes.size());
  for (std::size_t c = 0; c < modes.size(); ++c) {
    slots_[c].mode = modes[c];
    if (modes[c] != CounterMode::keyed_table || c >= key_extents.size() || !key_extents[c]) {
      continue;
    }
    // dense table only for small, known key domains
    std::size_t cells = 1;
    bool small = true;
    for (const auto& b : *key_extents[c]) {
      const Index ext = std::max<Index>(b.extent(), 0);
      if (ext == 0 || cells > (std::size_t{1} << 20) / static_cast<std::size_t>(ext)) {
        small = ext == 0 ? small : false;
        cells *= static_cast<std::size_t>(ext);
        continue;
      }
      cells *= static_cast<std::size_t>(ext);
    }
    if (small && cells <= (std::size_t{1} << 20)) {
      slots_[c].dense.assign(cells, 0);
      slots_[c].dense_bounds = *key_extents[c];
    }
  }
}

Index CounterState::next(std::size_t c, std::span<const Index> key) {
  Slot& s = slots_.at(c);
  if (s.mode == CounterMode::scalar_reuse) {
    if (!s.has_last || !std::equal(key.begin(), key.end(), s.last_key.begin(), s.last_key.end())) {
      if (s.has_last && lex_less(key, s.last_key)) {
        throw Error(Errc::CounterOrderViolation, "counter key regressed in scalar mode");
      }
      s.last_key.assign(key.begin(), key.end());
      s.has_last = true;
      s.scalar = 0;
    }
    return s.scalar++;
  }
  if (!s.dense.empty() || !s.dense_bounds.empty()) {
    std::size_t flat = 0;
    bool inside = true;
    for (std::size_t d = 0; d < key.size() && inside; ++d) {
      const auto& b = s.dense_bounds[d];
      inside = b.contains(key[d]);
      flat = flat * static_cast<std::size_t>(b.extent()) + static_cast<std::size_t>(key[d] - b.lower);
    }
    if (inside && flat < s.dense.size()) return s.dense[flat]++;
  }
  return s.table[Coord(key.begin(), key.end())]++;
}

EvalContext::EvalContext(std::size_t slot_count, const std::vector<CounterSpec>* counters,
                         CounterState* state, const std::map<std::string, int>& key_slots)
    : slots_(slot_count, 0), counters_(counters), state_(state) {
  if (counters_) {
    int next = static_cast<int>(slot_count);
    for (const auto& spec : *counters_) {
      std::vector<ExprPtr> resolved;
      for (const auto& k : spec.key_exprs) resolved.push_back(resolve_slots(k, key_slots, next));
      keys_.push_back(std::move(resolved));
    }
    slots_.resize(static_cast<std::size_t>(next), 0);
    cache_.assign(counters_->size(), 0);
    cached_.assign(counters_->size(), 0);
  }
}

void EvalContext::begin_nonzero() { std::fill(cached_.begin(), cached_.end(), 0); }

Index EvalContext::counter_value(int id) {
  const auto c = static_cast<std::size_t>(id);
  if (!state_ || c >= keys_.size()) throw Error(Errc::UnboundVariable, "counter without state");
  if (cached_[c]) return cache_[c];
  key_buf_.clear();
  for (const auto& k : keys_[c]) key_buf_.push_back(eval(*k));
  cache_[c] = state_->next(c, key_buf_);
  cached_[c] = 1;
  return cache_[c];
}

Index EvalContext::eval(const Expr& e) {
  switch (e.op) {
    case ExprOp::constant: return e.value;
    case ExprOp::var:
      if (e.slot < 0) throw Error(Errc::UnboundVariable, "unresolved variable '" + e.name + "'");
      return slots_[static_cast<std::size_t>(e.slot)];
    case ExprOp::param: throw Error(Errc::MissingParameter, "parameter '" + e.name + "' unbound");
    case ExprOp::counter: return counter_value(e.counter);
    case ExprOp::let:
      slots_[static_cast<std::size_t>(e.slot)] = eval(*e.args[0]);
      return eval(*e.args[1]);
    case ExprOp::morton: {
      Index coords[63];
      const std::size_t k = e.args.size();
      for (std::size_t d = 0; d < k; ++d) coords[d] = eval(*e.args[d]);
      return morton_code(std::span<const Index>(coords, k), static_cast<int>(63 / k));
    }
    default: return apply_binary(e.op, eval(*e.args[0]), eval(*e.args[1]));
  }
}

RemapEvaluator::RemapEvaluator(const RemapProgram& prog, CounterState& state)
    : src_arity_(prog.src_arity()) {
  if (!prog.bound() && !prog.params().empty()) {
    throw Error(Errc::MissingParameter, "remap parameters are not bound");
  }
  std::map<std::string, int> slots;
  for (std::size_t s = 0; s < prog.src_arity(); ++s) slots[prog.src_vars()[s]] = static_cast<int>(s);
  int next = static_cast<int>(prog.src_arity());
  for (const auto& e : prog.dst_exprs()) exprs_.push_back(resolve_slots(e, slots, next));
  ctx_ = std::make_unique<EvalContext>(static_cast<std::size_t>(next), &prog.counters(), &state, slots);
}

void RemapEvaluator::eval(std::span<const Index> coord, std::span<Index> out) {
  auto slots = ctx_->slots();
  std::copy(coord.begin(), coord.begin() + static_cast<std::ptrdiff_t>(src_arity_), slots.begin());
  ctx_->begin_nonzero();
  for (std::size_t d = 0; d < exprs_.size(); ++d) out[d] = ctx_->eval(*exprs_[d]);
}

Coord RemapEvaluator::eval(std::span<const Index> coord) {
  Coord out(exprs_.size());
  eval(coord, out);
  return out;
}

Coord eval_remap(const RemapProgram& prog, const std::map<std::string, Index>& params,
                 std::span<const Index> coord, CounterState& state) {
  if (coord.size() != prog.src_arity()) {
    throw Error(Errc::ArityError, "coordinate arity does not match remap source");
  }
  const RemapProgram bound = prog.bound() ? prog : prog.bind(params);
  RemapEvaluator ev(bound, state);
  return ev.eval(coord);
}

Index morton_code(std::span<const Index> coords, int bits) {
  const auto k = static_cast<int>(coords.size());
  if (bits < 0 || (k > 0 && bits * k > 63)) {
    throw Error(Errc::BitsOutOfRange, std::to_string(bits) + " bits for " + std::to_string(k) +
                                          " coordinates");
  }
  for (Index c : coords) {
    if (c < 0 || (bits < 63 && c >= (Index{1} << bits))) {
      throw Error(Errc::BitsOutOfRange, "coordinate " + std::to_string(c) + " needs more than " +
                                            std::to_string(bits) + " bits");
    }
  }
  Index code = 0;
  for (int b = 0; b < bits; ++b) {
    for (int d = 0; d < k; ++d) {
      code |= ((coords[static_cast<std::size_t>(d)] >> b) & 1) << (b * k + d);
    }
  }
  return code;
}

CounterMode choose_counter_mode(const CounterSpec& counter,
                                std::span<const std::string> grouped_prefix) {
  if (counter.key_vars.empty()) return CounterMode::scalar_reuse;
  if (counter.key_vars.size() > grouped_prefix.size()) return CounterMode::keyed_table;
  for (std::size_t k = 0; k < counter.key_vars.size(); ++k) {
    if (!is_var(*counter.key_exprs[k], grouped_prefix[k])) return CounterMode::keyed_table;
  }
  return CounterMode::scalar_reuse;
}

// ---------------------------------------------------------------------------
// Interval bounds
// ---------------------------------------------------------------------------

namespace {

constexpr Index kBoundLimit = Index{1} << 61;

Index checked(__int128 v) {
  if (v > kBoundLimit || v < -kBoundLimit) throw Error(Errc::UnboundedDim, "bound overflow");
  return static_cast<Index>(v);
}

Index floor_div(Index a, Index b) {
  Index q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int bit_length(Index v) {
  int n = 0;
  while (v > 0) {
    ++n;
    v >>= 1;
  }
  return n;
}

struct BoundsCtx {
  const RemapProgram& prog;
  std::span<const Index> dims;
};

DimBounds counter_bounds(const CounterSpec& spec, const BoundsCtx& ctx) {
  std::vector<std::string> keyed;
  for (const auto& k : spec.key_exprs) collect_free_vars(*k, keyed);
  __int128 product = 1;
  for (std::size_t s = 0; s < ctx.prog.src_arity() && s < ctx.dims.size(); ++s) {
    if (std::find(keyed.begin(), keyed.end(), ctx.prog.src_vars()[s]) == keyed.end()) {
      product *= ctx.dims[s];
    }
  }
  return {0, checked(product - 1)};
}

DimBounds bounds_of(const Expr& e, std::map<std::string, DimBounds>& vars, const BoundsCtx& ctx) {
  switch (e.op) {
    case ExprOp::constant: return {e.value, e.value};
    case ExprOp::var: {
      auto it = vars.find(e.name);
      if (it == vars.end()) throw Error(Errc::UnboundedDim, "no range for '" + e.name + "'");
      return it->second;
    }
    case ExprOp::param: throw Error(Errc::UnboundedDim, "unbound parameter '" + e.name + "'");
    case ExprOp::counter:
      return counter_bounds(ctx.prog.counters().at(static_cast<std::size_t>(e.counter)), ctx);
    case ExprOp::let: {
      const DimBounds b = bounds_of(*e.args[0], vars, ctx);
      auto saved = vars;
      vars[e.name] = b;
      const DimBounds r = bounds_of(*e.args[1], vars, ctx);
      vars = std::move(saved);
      return r;
    }
    case ExprOp::morton: {
      int bits = 0;
      for (const auto& a : e.args) {
        const DimBounds b = bounds_of(*a, vars, ctx);
        if (b.lower < 0) throw Error(Errc::UnboundedDim, "morton operand may be negative");
        bits = std::max(bits, bit_length(b.upper));
      }
      const auto k = static_cast<int>(e.args.size());
      if (bits * k > 62) throw Error(Errc::UnboundedDim, "morton code too wide");
      return {0, (Index{1} << (bits * k)) - 1};
    }
    default: break;
  }
  const DimBounds a = bounds_of(*e.args[0], vars, ctx);
  const DimBounds b = bounds_of(*e.args[1], vars, ctx);
  const auto span4 = [](Index p, Index q, Index r, Index s) {
    return DimBounds{std::min({p, q, r, s}), std::max({p, q, r, s})};
  };
  switch (e.op) {
    case ExprOp::add:
      return {checked(__int128(a.lower) + b.lower), checked(__int128(a.upper) + b.upper)};
    case ExprOp::sub:
      return {checked(__int128(a.lower) - b.upper), checked(__int128(a.upper) - b.lower)};
    case ExprOp::mul:
      return span4(checked(__int128(a.lower) * b.lower), checked(__int128(a.lower) * b.upper),
                   checked(__int128(a.upper) * b.lower), checked(__int128(a.upper) * b.upper));
    case ExprOp::div:
      if (b.lower <= 0) throw Error(Errc::UnboundedDim, "denominator may be nonpositive");
      return span4(floor_div(a.lower, b.lower), floor_div(a.lower, b.upper),
                   floor_div(a.upper, b.lower), floor_div(a.upper, b.upper));
    case ExprOp::mod:
      if (b.lower <= 0) throw Error(Errc::UnboundedDim, "modulus may be nonpositive");
      if (a.lower >= 0 && a.upper < b.lower) return a;
      return {0, b.upper - 1};
    case ExprOp::shl:
    case ExprOp::shr:
      if (a.lower < 0 || b.lower < 0 || b.upper > 62) {
        throw Error(Errc::UnboundedDim, "shift range unbounded");
      }
      if (e.op == ExprOp::shl) {
        return {checked(__int128(a.lower) << b.lower), checked(__int128(a.upper) << b.upper)};
      }
      return {a.lower >> b.upper, a.upper >> b.lower};
    case ExprOp::band:
    case ExprOp::bor:
    case ExprOp::bxor: {
      if (a.lower < 0 || b.lower < 0) {
        throw Error(Errc::UnboundedDim, "bitwise operand may be negative");
      }
      if (e.op == ExprOp::band) return {0, std::min(a.upper, b.upper)};
      const int bits = std::max(bit_length(a.upper), bit_length(b.upper));
      const Index hi = bits >= 62 ? kBoundLimit : (Index{1} << bits) - 1;
      return {e.op == ExprOp::bor ? std::max(a.lower, b.lower) : 0, hi};
    }
    default: throw Error(Errc::UnboundedDim, "unsupported operator");
  }
}

}  // namespace

DimBounds expr_bounds(const Expr& e, const RemapProgram& prog,
                      const std::map<std::string, DimBounds>& vars, std::span<const Index> dims) {
  auto scope = vars;
  return bounds_of(e, scope, BoundsCtx{prog, dims});
}

std::vector<DimBounds> remapped_bounds(const RemapProgram& prog, std::span<const Index> dims) {
  if (dims.size() != prog.src_arity()) {
    throw Error(Errc::OrderMismatch, "tensor order " + std::to_string(dims.size()) +
                                         " does not match remap source arity " +
                                         std::to_string(prog.src_arity()));
  }
  std::vector<DimBounds> out;
  const bool empty = std::any_of(dims.begin(), dims.end(), [](Index d) { return d <= 0; });
  std::map<std::string, DimBounds> vars;
  for (std::size_t s = 0; s < dims.size(); ++s) vars[prog.src_vars()[s]] = {0, dims[s] - 1};
  for (const auto& e : prog.dst_exprs()) {
    if (empty) {
      out.push_back({0, -1});
      continue;
    }
    out.push_back(expr_bounds(*e, prog, vars, dims));
  }
  return out;
}

}  // namespace tmorph
