#pragma once

// Parser for the behavioral model language attached to TD properties:
//
//   model        := behavior '=' expr [ '|' constraints [ '|' guesses ] ]
//   input-model  :=              expr [ '|' constraints [ '|' guesses ] ]
//   behavior     := 'self' | 'dot' '(' 'self' ')'
//   constraints  := [ target ('>=' | '<=') number { ',' ... } ]
//   guesses      := [ target '=' number { ',' ... } ]
//   target       := 'params' '[' int ']' | 'global' '[' int ']'
//
// Expressions are infix arithmetic (+ - * /, unary minus, parentheses) over
// numbers, params[i], global[i], self, value(), input(title),
// sum(inputType(@tag)) and the builtins max, min, round, cos, sin, abs
// (optionally written with a `math.` prefix).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <compare>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dtwt/error.hpp"
#include "dtwt/expr.hpp"

namespace dtwt {

enum class Behavior { Algebraic, Differential };
enum class BoundKind { Lower, Upper };

struct ParamTarget {
  enum class Scope { Local, Global } scope = Scope::Local;
  int index = 0;

  auto operator<=>(const ParamTarget&) const = default;
  std::string str() const { return (scope == Scope::Local ? "params[" : "global[") + std::to_string(index) + "]"; }
};

struct Constraint {
  ParamTarget target;
  BoundKind kind = BoundKind::Lower;
  double value = 0.0;
  bool operator==(const Constraint&) const = default;
};

struct Guess {
  ParamTarget target;
  double value = 0.0;
  bool operator==(const Guess&) const = default;
};

/// One parsed model string. `behavior` is empty for modelInput expressions,
/// which have no left-hand side.
struct ModelSpec {
  std::optional<Behavior> behavior;
  ExprPtr expr;
  int local_param_count = 0;
  std::vector<Constraint> constraints;
  std::vector<Guess> guesses;

  std::optional<double> guess_for(ParamTarget t) const {
    for (const auto& g : guesses)
      if (g.target == t) return g.value;
    return std::nullopt;
  }
  std::optional<double> bound_for(ParamTarget t, BoundKind k) const {
    for (const auto& c : constraints)
      if (c.target == t && c.kind == k) return c.value;
    return std::nullopt;
  }
};

inline bool operator==(const ModelSpec& a, const ModelSpec& b) {
  return a.behavior == b.behavior && same(a.expr, b.expr) && a.local_param_count == b.local_param_count &&
         a.constraints == b.constraints && a.guesses == b.guesses;
}

namespace parser_detail {

enum class Tok { Number, Ident, Tag, LParen, RParen, LBracket, RBracket, Comma, Plus, Minus, Star, Slash, Ge, Le, Eq, Pipe, End };

struct Token {
  Tok kind;
  std::string_view text;
  std::size_t pos;
  double number = 0.0;
};

inline std::string_view describe(Tok t) {
  switch (t) {
    case Tok::Number: return "number";
    case Tok::Ident: return "identifier";
    case Tok::Tag: return "type tag";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::LBracket: return "'['";
    case Tok::RBracket: return "']'";
    case Tok::Comma: return "','";
    case Tok::Plus: return "'+'";
    case Tok::Minus: return "'-'";
    case Tok::Star: return "'*'";
    case Tok::Slash: return "'/'";
    case Tok::Ge: return "'>='";
    case Tok::Le: return "'<='";
    case Tok::Eq: return "'='";
    case Tok::Pipe: return "'|'";
    case Tok::End: return "end of model";
  }
  return "?";
}

[[noreturn]] inline void syntax(std::size_t pos, std::string msg) {
  throw Error(ErrorCode::ModelSyntax, std::move(msg), "position " + std::to_string(pos));
}

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      if (i < src.size() && src[i] == '.') {
        ++i;
        while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      }
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
          i = j;
          while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        }
      }
      Token t{Tok::Number, src.substr(start, i - start), start};
      // from_chars rejects a leading '.', so parse "0" + text in that case.
      std::string text = (t.text.front() == '.') ? "0" + std::string(t.text) : std::string(t.text);
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), t.number);
      if (ec != std::errc{} || ptr != text.data() + text.size()) syntax(start, "malformed number '" + text + "'");
      out.push_back(t);
      continue;
    }
    if (ident_start(c)) {
      while (i < src.size() && ident_char(src[i])) ++i;
      out.push_back({Tok::Ident, src.substr(start, i - start), start});
      continue;
    }
    if (c == '@') {
      ++i;
      while (i < src.size() && ident_char(src[i])) ++i;
      if (i == start + 1) syntax(start, "empty type tag");
      out.push_back({Tok::Tag, src.substr(start, i - start), start});
      continue;
    }
    auto two = [&](char next) { return i + 1 < src.size() && src[i + 1] == next; };
    Tok kind;
    std::size_t len = 1;
    switch (c) {
      case '(': kind = Tok::LParen; break;
      case ')': kind = Tok::RParen; break;
      case '[': kind = Tok::LBracket; break;
      case ']': kind = Tok::RBracket; break;
      case ',': kind = Tok::Comma; break;
      case '+': kind = Tok::Plus; break;
      case '-': kind = Tok::Minus; break;
      case '*': kind = Tok::Star; break;
      case '/': kind = Tok::Slash; break;
      case '|': kind = Tok::Pipe; break;
      case '=': kind = Tok::Eq; break;
      case '>':
        if (!two('=')) syntax(i, "expected '>='");
        kind = Tok::Ge;
        len = 2;
        break;
      case '<':
        if (!two('=')) syntax(i, "expected '<='");
        kind = Tok::Le;
        len = 2;
        break;
      default: syntax(i, std::string("unexpected character '") + c + "'");
    }
    out.push_back({kind, src.substr(start, len), start});
    i += len;
  }
  out.push_back({Tok::End, {}, src.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  ModelSpec parse(bool expect_behavior) {
    ModelSpec spec;
    if (expect_behavior) {
      spec.behavior = parse_behavior();
      expect(Tok::Eq, "'=' after the behavior");
    }
    spec.expr = parse_expr();
    if (accept(Tok::Pipe)) {
      parse_constraints(spec);
      if (accept(Tok::Pipe)) parse_guesses(spec);
    }
    if (peek().kind != Tok::End) fail_expected("end of model");
    finish(spec);
    return spec;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  bool accept(Tok k) {
    if (peek().kind != k) return false;
    ++pos_;
    return true;
  }
  const Token& expect(Tok k, std::string_view what) {
    if (peek().kind != k) fail_expected(what);
    return next();
  }
  [[noreturn]] void fail_expected(std::string_view what) const {
    const Token& t = peek();
    std::string found = t.kind == Tok::End ? "end of model" : "'" + std::string(t.text) + "'";
    syntax(t.pos, "expected " + std::string(what) + ", found " + found);
  }
  bool at_ident(std::string_view name) const { return peek().kind == Tok::Ident && peek().text == name; }

  Behavior parse_behavior() {
    if (at_ident("self")) {
      next();
      return Behavior::Algebraic;
    }
    if (at_ident("dot")) {
      next();
      expect(Tok::LParen, "'(' after dot");
      if (!at_ident("self")) fail_expected("'self' inside dot(...)");
      next();
      expect(Tok::RParen, "')'");
      return Behavior::Differential;
    }
    fail_expected("'self' or 'dot(self)'");
  }

  ExprPtr parse_expr() {
    ExprPtr lhs = parse_term();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const BinaryOp op = next().kind == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub;
      lhs = ex::binary(op, lhs, parse_term());
    }
    return lhs;
  }

  ExprPtr parse_term() {
    ExprPtr lhs = parse_unary();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      const BinaryOp op = next().kind == Tok::Star ? BinaryOp::Mul : BinaryOp::Div;
      lhs = ex::binary(op, lhs, parse_unary());
    }
    return lhs;
  }

  ExprPtr parse_unary() {
    if (accept(Tok::Minus)) return ex::neg(parse_unary());
    return parse_primary();
  }

  int parse_index() {
    expect(Tok::LBracket, "'['");
    if (peek().kind == Tok::Minus) throw Error(ErrorCode::NegativeIndex, "parameter index must be >= 0", "position " + std::to_string(peek().pos));
    const Token& t = expect(Tok::Number, "integer index");
    if (t.number != std::floor(t.number) || t.text.find_first_of(".eE") != std::string_view::npos)
      syntax(t.pos, "parameter index must be an integer");
    if (t.number > 1e6) syntax(t.pos, "parameter index out of range");
    expect(Tok::RBracket, "']'");
    return static_cast<int>(t.number);
  }

  ParamTarget parse_target() {
    if (at_ident("params")) {
      next();
      return {ParamTarget::Scope::Local, parse_index()};
    }
    if (at_ident("global")) {
      next();
      return {ParamTarget::Scope::Global, parse_index()};
    }
    fail_expected("params[i] or global[i]");
  }

  static std::optional<Builtin> builtin(std::string_view name) {
    if (name.starts_with("math.")) name.remove_prefix(5);
    if (name == "max") return Builtin::Max;
    if (name == "min") return Builtin::Min;
    if (name == "round") return Builtin::Round;
    if (name == "cos") return Builtin::Cos;
    if (name == "sin") return Builtin::Sin;
    if (name == "abs") return Builtin::Abs;
    return std::nullopt;
  }

  ExprPtr parse_primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number:
        next();
        return ex::constant(t.number);
      case Tok::LParen: {
        next();
        ExprPtr inner = parse_expr();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::Ident: break;
      default: fail_expected("an operand");
    }
    const std::string_view name = t.text;
    const std::size_t at = t.pos;
    next();
    if (name == "self") return ex::self();
    if (name == "params") return ex::local(parse_index());
    if (name == "global") return ex::global(parse_index());
    if (name == "value") {
      expect(Tok::LParen, "'(' after value");
      expect(Tok::RParen, "')'");
      return ex::value();
    }
    if (name == "input") {
      expect(Tok::LParen, "'(' after input");
      const Token& title = expect(Tok::Ident, "model input title");
      expect(Tok::RParen, "')'");
      return ex::input(std::string(title.text));
    }
    if (name == "sum") {
      expect(Tok::LParen, "'(' after sum");
      if (!at_ident("inputType")) fail_expected("inputType(...) inside sum");
      next();
      expect(Tok::LParen, "'(' after inputType");
      const Token& tag = peek();
      if (tag.kind != Tok::Tag && tag.kind != Tok::Ident) fail_expected("model input type tag");
      next();
      expect(Tok::RParen, "')'");
      expect(Tok::RParen, "')'");
      return ex::input_type_sum(std::string(tag.text));
    }
    if (auto fn = builtin(name)) {
      expect(Tok::LParen, "'(' after " + std::string(name));
      std::vector<ExprPtr> args;
      if (peek().kind != Tok::RParen) {
        args.push_back(parse_expr());
        while (accept(Tok::Comma)) args.push_back(parse_expr());
      }
      expect(Tok::RParen, "')'");
      if (args.size() < builtin_arity_min(*fn) || args.size() > builtin_arity_max(*fn))
        syntax(at, "wrong number of arguments to " + std::string(builtin_name(*fn)));
      return ex::call(*fn, std::move(args));
    }
    throw Error(ErrorCode::UnknownIdentifier, "unknown identifier '" + std::string(name) + "'", "position " + std::to_string(at));
  }

  double parse_signed_number() {
    const bool negative = accept(Tok::Minus);
    const Token& t = expect(Tok::Number, "number");
    return negative ? -t.number : t.number;
  }

  void parse_constraints(ModelSpec& spec) {
    if (peek().kind == Tok::Pipe || peek().kind == Tok::End) return;
    do {
      const std::size_t at = peek().pos;
      Constraint c;
      c.target = parse_target();
      if (accept(Tok::Ge)) c.kind = BoundKind::Lower;
      else if (accept(Tok::Le)) c.kind = BoundKind::Upper;
      else fail_expected("'>=' or '<=' in constraint");
      c.value = parse_signed_number();
      if (spec.bound_for(c.target, c.kind))
        throw Error(ErrorCode::DuplicateAssignment, "repeated bound on " + c.target.str(), "position " + std::to_string(at));
      spec.constraints.push_back(c);
    } while (accept(Tok::Comma));
  }

  void parse_guesses(ModelSpec& spec) {
    if (peek().kind == Tok::End) return;
    do {
      const std::size_t at = peek().pos;
      Guess g;
      g.target = parse_target();
      expect(Tok::Eq, "'=' in guess");
      g.value = parse_signed_number();
      if (spec.guess_for(g.target))
        throw Error(ErrorCode::DuplicateAssignment, "repeated guess for " + g.target.str(), "position " + std::to_string(at));
      spec.guesses.push_back(g);
    } while (accept(Tok::Comma));
  }

  static void finish(ModelSpec& spec) {
    int max_local = -1;
    visit_tree(spec.expr, [&](const Expr& e) {
      if (const auto* p = std::get_if<node::LocalParam>(&e.node)) max_local = std::max(max_local, p->index);
    });
    for (const auto& c : spec.constraints) {
      if (!std::isfinite(c.value)) throw Error(ErrorCode::ModelSyntax, "constraint bound must be finite", c.target.str());
      if (c.target.scope == ParamTarget::Scope::Local) max_local = std::max(max_local, c.target.index);
    }
    for (const auto& g : spec.guesses)
      if (g.target.scope == ParamTarget::Scope::Local) max_local = std::max(max_local, g.target.index);
    spec.local_param_count = max_local + 1;

    for (const auto& c : spec.constraints) {
      if (c.kind != BoundKind::Lower) continue;
      if (auto hi = spec.bound_for(c.target, BoundKind::Upper); hi && *hi < c.value)
        throw Error(ErrorCode::ConflictingBounds, "lower bound exceeds upper bound", c.target.str());
    }
    for (const auto& g : spec.guesses) {
      auto lo = spec.bound_for(g.target, BoundKind::Lower);
      auto hi = spec.bound_for(g.target, BoundKind::Upper);
      if ((lo && g.value < *lo) || (hi && g.value > *hi))
        throw Error(ErrorCode::GuessOutsideBounds, "guess " + format_number(g.value) + " violates its constraints",
                    g.target.str());
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace parser_detail

/// Parses a property model (`self = ...` or `dot(self) = ...`).
inline ModelSpec parse_model(std::string_view src) { return parser_detail::Parser(src).parse(true); }

/// Parses a modelInput expression, which has no behavior on the left.
inline ModelSpec parse_input_model(std::string_view src) { return parser_detail::Parser(src).parse(false); }

inline std::string render_model(const ModelSpec& m) {
  std::string out;
  if (m.behavior) out += *m.behavior == Behavior::Differential ? "dot(self) = " : "self = ";
  out += render(*m.expr);
  if (m.constraints.empty() && m.guesses.empty()) return out;
  out += " | ";
  for (std::size_t i = 0; i < m.constraints.size(); ++i) {
    if (i) out += ", ";
    const auto& c = m.constraints[i];
    out += c.target.str() + (c.kind == BoundKind::Lower ? " >= " : " <= ") + format_number(c.value);
  }
  if (m.guesses.empty()) return out;
  out += " | ";
  for (std::size_t i = 0; i < m.guesses.size(); ++i) {
    if (i) out += ", ";
    out += m.guesses[i].target.str() + " = " + format_number(m.guesses[i].value);
  }
  return out;
}

}  // namespace dtwt
