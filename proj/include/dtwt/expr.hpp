#pragma once

#include <charconv>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dtwt {

enum class BinaryOp { Add, Sub, Mul, Div };
enum class Builtin { Max, Min, Round, Cos, Sin, Abs };
enum class StateKind { Differential, Algebraic };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

namespace node {
// Source-level nodes, produced by the model parser.
struct Const { double value; };
struct LocalParam { int index; };
struct GlobalParam { int index; };
struct SelfRef {};
struct ValueRef {};
struct InputRef { std::string title; };
/// `sum(inputType(@tag))`; sum is the only aggregator.
struct InputTypeSum { std::string tag; };
struct Call { Builtin fn; std::vector<ExprPtr> args; };
struct Binary { BinaryOp op; ExprPtr lhs; ExprPtr rhs; };
struct Negate { ExprPtr arg; };

// Resolved-only nodes, produced by model resolution.
struct StateRef { StateKind kind; int index; std::string name; };
/// Zero-order-hold read of a schedule channel (writable signal or recorded column).
struct SignalRef { std::string channel; };
struct ParamRef { int index; };
/// Expanded aggregation, kept n-ary so the parsed form can be printed faithfully.
struct Sum { std::vector<ExprPtr> terms; };
}  // namespace node

struct Expr {
  using Node = std::variant<node::Const, node::LocalParam, node::GlobalParam, node::SelfRef, node::ValueRef,
                            node::InputRef, node::InputTypeSum, node::Call, node::Binary, node::Negate,
                            node::StateRef, node::SignalRef, node::ParamRef, node::Sum>;
  Node node;
};

namespace ex {
inline ExprPtr make(Expr::Node n) { return std::make_shared<const Expr>(Expr{std::move(n)}); }
inline ExprPtr constant(double v) { return make(node::Const{v}); }
inline ExprPtr local(int i) { return make(node::LocalParam{i}); }
inline ExprPtr global(int i) { return make(node::GlobalParam{i}); }
inline ExprPtr self() { return make(node::SelfRef{}); }
inline ExprPtr value() { return make(node::ValueRef{}); }
inline ExprPtr input(std::string title) { return make(node::InputRef{std::move(title)}); }
inline ExprPtr input_type_sum(std::string tag) { return make(node::InputTypeSum{std::move(tag)}); }
inline ExprPtr call(Builtin fn, std::vector<ExprPtr> args) { return make(node::Call{fn, std::move(args)}); }
inline ExprPtr binary(BinaryOp op, ExprPtr l, ExprPtr r) { return make(node::Binary{op, std::move(l), std::move(r)}); }
inline ExprPtr neg(ExprPtr a) { return make(node::Negate{std::move(a)}); }
inline ExprPtr state(StateKind k, int i, std::string name) { return make(node::StateRef{k, i, std::move(name)}); }
inline ExprPtr signal(std::string ch) { return make(node::SignalRef{std::move(ch)}); }
inline ExprPtr param(int i) { return make(node::ParamRef{i}); }
inline ExprPtr sum(std::vector<ExprPtr> terms) { return make(node::Sum{std::move(terms)}); }
}  // namespace ex

inline std::string_view builtin_name(Builtin fn) {
  switch (fn) {
    case Builtin::Max: return "max";
    case Builtin::Min: return "min";
    case Builtin::Round: return "round";
    case Builtin::Cos: return "cos";
    case Builtin::Sin: return "sin";
    case Builtin::Abs: return "abs";
  }
  return "?";
}

inline std::size_t builtin_arity_min(Builtin fn) { return (fn == Builtin::Max || fn == Builtin::Min) ? 2 : 1; }
inline std::size_t builtin_arity_max(Builtin fn) {
  return (fn == Builtin::Max || fn == Builtin::Min) ? static_cast<std::size_t>(-1) : 1;
}

inline char op_char(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return '+';
    case BinaryOp::Sub: return '-';
    case BinaryOp::Mul: return '*';
    case BinaryOp::Div: return '/';
  }
  return '?';
}

inline bool operator==(const Expr& a, const Expr& b);

inline bool same(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

namespace detail {
inline bool same_list(const std::vector<ExprPtr>& a, const std::vector<ExprPtr>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same(a[i], b[i])) return false;
  return true;
}

template <class... Ts>
struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace detail

/// Structural equality. Constants compare bitwise-equal values (NaN never equal).
inline bool operator==(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, node::Const>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, node::LocalParam> || std::is_same_v<T, node::GlobalParam> ||
                           std::is_same_v<T, node::ParamRef>)
          return x.index == y.index;
        else if constexpr (std::is_same_v<T, node::SelfRef> || std::is_same_v<T, node::ValueRef>) return true;
        else if constexpr (std::is_same_v<T, node::InputRef>) return x.title == y.title;
        else if constexpr (std::is_same_v<T, node::InputTypeSum>) return x.tag == y.tag;
        else if constexpr (std::is_same_v<T, node::Call>) return x.fn == y.fn && detail::same_list(x.args, y.args);
        else if constexpr (std::is_same_v<T, node::Binary>)
          return x.op == y.op && same(x.lhs, y.lhs) && same(x.rhs, y.rhs);
        else if constexpr (std::is_same_v<T, node::Negate>) return same(x.arg, y.arg);
        else if constexpr (std::is_same_v<T, node::StateRef>) return x.kind == y.kind && x.index == y.index;
        else if constexpr (std::is_same_v<T, node::SignalRef>) return x.channel == y.channel;
        else if constexpr (std::is_same_v<T, node::Sum>) return detail::same_list(x.terms, y.terms);
        else return false;
      },
      a.node);
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Rewrites n-ary sums into left-associated additions so that an aggregated
/// expression compares equal to its hand-written expansion.
inline ExprPtr normalize(const ExprPtr& e) {
  return std::visit(
      [&](const auto& x) -> ExprPtr {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, node::Sum>) {
          if (x.terms.empty()) return ex::constant(0.0);
          ExprPtr acc = normalize(x.terms.front());
          for (std::size_t i = 1; i < x.terms.size(); ++i)
            acc = ex::binary(BinaryOp::Add, acc, normalize(x.terms[i]));
          return acc;
        } else if constexpr (std::is_same_v<T, node::Binary>) {
          return ex::binary(x.op, normalize(x.lhs), normalize(x.rhs));
        } else if constexpr (std::is_same_v<T, node::Negate>) {
          return ex::neg(normalize(x.arg));
        } else if constexpr (std::is_same_v<T, node::Call>) {
          std::vector<ExprPtr> args;
          for (const auto& a : x.args) args.push_back(normalize(a));
          return ex::call(x.fn, std::move(args));
        } else {
          return e;
        }
      },
      e->node);
}

template <class Fn>
void visit_tree(const ExprPtr& e, Fn&& fn) {
  fn(*e);
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, node::Call>) {
          for (const auto& a : x.args) visit_tree(a, fn);
        } else if constexpr (std::is_same_v<T, node::Binary>) {
          visit_tree(x.lhs, fn);
          visit_tree(x.rhs, fn);
        } else if constexpr (std::is_same_v<T, node::Negate>) {
          visit_tree(x.arg, fn);
        } else if constexpr (std::is_same_v<T, node::Sum>) {
          for (const auto& a : x.terms) visit_tree(a, fn);
        }
      },
      e->node);
}

namespace detail {

inline int precedence(const Expr& e) {
  if (const auto* b = std::get_if<node::Binary>(&e.node))
    return (b->op == BinaryOp::Add || b->op == BinaryOp::Sub) ? 1 : 2;
  if (std::holds_alternative<node::Negate>(e.node)) return 3;
  return 4;
}

struct RenderStyle {
  bool listing = false;  // parsed-form style: params[i], x[i], y[i], readProperty(...)
};

inline void render(const Expr& e, const RenderStyle& style, std::string& out);

inline void render_child(const Expr& e, bool parens, const RenderStyle& style, std::string& out) {
  if (parens) out += '(';
  render(e, style, out);
  if (parens) out += ')';
}

inline void render(const Expr& e, const RenderStyle& style, std::string& out) {
  std::visit(
      overloaded{
          [&](const node::Const& c) { out += format_number(c.value); },
          [&](const node::LocalParam& p) { out += "params[" + std::to_string(p.index) + "]"; },
          [&](const node::GlobalParam& p) { out += "global[" + std::to_string(p.index) + "]"; },
          [&](const node::SelfRef&) { out += "self"; },
          [&](const node::ValueRef&) { out += "value()"; },
          [&](const node::InputRef& r) { out += "input(" + r.title + ")"; },
          [&](const node::InputTypeSum& r) { out += "sum(inputType(" + r.tag + "))"; },
          [&](const node::Call& c) {
            out += builtin_name(c.fn);
            out += '(';
            for (std::size_t i = 0; i < c.args.size(); ++i) {
              if (i) out += style.listing ? "," : ", ";
              render(*c.args[i], style, out);
            }
            out += ')';
          },
          [&](const node::Binary& b) {
            const int p = precedence(e);
            render_child(*b.lhs, precedence(*b.lhs) < p, style, out);
            if (style.listing) {
              out += op_char(b.op);
            } else {
              out += ' ';
              out += op_char(b.op);
              out += ' ';
            }
            render_child(*b.rhs, precedence(*b.rhs) <= p, style, out);
          },
          [&](const node::Negate& n) {
            out += '-';
            render_child(*n.arg, precedence(*n.arg) < 3, style, out);
          },
          [&](const node::StateRef& s) {
            out += (s.kind == StateKind::Differential ? "x[" : "y[") + std::to_string(s.index) + "]";
          },
          [&](const node::SignalRef& s) { out += "readProperty(\"" + s.channel + "\",timestamp,data)"; },
          [&](const node::ParamRef& p) { out += "params[" + std::to_string(p.index) + "]"; },
          [&](const node::Sum& s) {
            out += '(';
            for (std::size_t i = 0; i < s.terms.size(); ++i) {
              if (i) out += '+';
              out += '(';
              render(*s.terms[i], style, out);
              out += ')';
            }
            out += ')';
          },
      },
      e.node);
}
}  // namespace detail

/// Model-language text for a source expression (parses back to the same tree).
inline std::string render(const Expr& e) {
  std::string out;
  detail::render(e, {}, out);
  return out;
}

/// Compact parsed-form text for a resolved expression, e.g.
/// `params[1]*(params[3]-x[0])+y[0]`.
inline std::string render_listing(const Expr& e) {
  std::string out;
  detail::render(e, {.listing = true}, out);
  return out;
}

}  // namespace dtwt
