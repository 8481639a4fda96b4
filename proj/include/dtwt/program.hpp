#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dtwt/error.hpp"
#include "dtwt/expr.hpp"

namespace dtwt {

/// A resolved expression flattened to postfix code over four operand banks:
/// differential states x, algebraic states y, signals s and parameters p.
class Program {
 public:
  enum class Op : unsigned char { Const, X, Y, S, P, Add, Sub, Mul, Div, Neg, Max, Min, Round, Cos, Sin, Abs, Sum };
  struct Ins {
    Op op;
    int arg = 0;       // bank index, or operand count for Max/Min/Sum
    double value = 0;  // Const
  };

  Program() = default;

  /// `channel_index` maps signal names to positions in the signal bank.
  Program(const ExprPtr& e, const std::map<std::string, int>& channel_index) {
    emit(*e, channel_index);
    int depth = 0;
    for (const auto& ins : code_) {
      depth += effect(ins);
      max_depth_ = std::max(max_depth_, depth);
    }
  }

  const std::vector<Ins>& code() const { return code_; }
  int max_depth() const { return max_depth_; }

  /// `stack` must hold at least max_depth() doubles.
  double eval(const double* x, const double* y, const double* s, const double* p, double* stack) const {
    int sp = 0;
    for (const auto& ins : code_) {
      switch (ins.op) {
        case Op::Const: stack[sp++] = ins.value; break;
        case Op::X: stack[sp++] = x[ins.arg]; break;
        case Op::Y: stack[sp++] = y[ins.arg]; break;
        case Op::S: stack[sp++] = s[ins.arg]; break;
        case Op::P: stack[sp++] = p[ins.arg]; break;
        case Op::Add: --sp; stack[sp - 1] = stack[sp - 1] + stack[sp]; break;
        case Op::Sub: --sp; stack[sp - 1] = stack[sp - 1] - stack[sp]; break;
        case Op::Mul: --sp; stack[sp - 1] = stack[sp - 1] * stack[sp]; break;
        case Op::Div:
          --sp;
          if (stack[sp] == 0.0) throw Error(ErrorCode::NumericDomain, "division by zero");
          stack[sp - 1] = stack[sp - 1] / stack[sp];
          break;
        case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
        case Op::Max: {
          double v = stack[sp - ins.arg];
          for (int k = 1; k < ins.arg; ++k) v = std::max(v, stack[sp - ins.arg + k]);
          sp -= ins.arg - 1;
          stack[sp - 1] = v;
          break;
        }
        case Op::Min: {
          double v = stack[sp - ins.arg];
          for (int k = 1; k < ins.arg; ++k) v = std::min(v, stack[sp - ins.arg + k]);
          sp -= ins.arg - 1;
          stack[sp - 1] = v;
          break;
        }
        case Op::Sum: {
          double v = stack[sp - ins.arg];
          for (int k = 1; k < ins.arg; ++k) v = v + stack[sp - ins.arg + k];
          sp -= ins.arg - 1;
          stack[sp - 1] = v;
          break;
        }
        case Op::Round:
          if (!std::isfinite(stack[sp - 1])) throw Error(ErrorCode::NumericDomain, "round of a non-finite value");
          stack[sp - 1] = std::round(stack[sp - 1]);  // half away from zero
          break;
        case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
        case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
        case Op::Abs: stack[sp - 1] = std::fabs(stack[sp - 1]); break;
      }
    }
    return stack[0];
  }

 private:
  static int effect(const Ins& i) {
    switch (i.op) {
      case Op::Const: case Op::X: case Op::Y: case Op::S: case Op::P: return 1;
      case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: return -1;
      case Op::Max: case Op::Min: case Op::Sum: return 1 - i.arg;
      default: return 0;
    }
  }

  void emit(const Expr& e, const std::map<std::string, int>& ch) {
    std::visit(
        detail::overloaded{
            [&](const node::Const& c) { code_.push_back({Op::Const, 0, c.value}); },
            [&](const node::StateRef& r) { code_.push_back({r.kind == StateKind::Differential ? Op::X : Op::Y, r.index}); },
            [&](const node::SignalRef& r) {
              auto it = ch.find(r.channel);
              if (it == ch.end()) throw Error(ErrorCode::UnknownChannel, "signal '" + r.channel + "' has no slot", r.channel);
              code_.push_back({Op::S, it->second});
            },
            [&](const node::ParamRef& r) { code_.push_back({Op::P, r.index}); },
            [&](const node::Binary& b) {
              emit(*b.lhs, ch);
              emit(*b.rhs, ch);
              static constexpr Op ops[] = {Op::Add, Op::Sub, Op::Mul, Op::Div};
              code_.push_back({ops[static_cast<int>(b.op)]});
            },
            [&](const node::Negate& n) {
              emit(*n.arg, ch);
              code_.push_back({Op::Neg});
            },
            [&](const node::Sum& s) {
              for (const auto& t : s.terms) emit(*t, ch);
              code_.push_back({Op::Sum, static_cast<int>(s.terms.size())});
            },
            [&](const node::Call& c) {
              for (const auto& a : c.args) emit(*a, ch);
              switch (c.fn) {
                case Builtin::Max: code_.push_back({Op::Max, static_cast<int>(c.args.size())}); break;
                case Builtin::Min: code_.push_back({Op::Min, static_cast<int>(c.args.size())}); break;
                case Builtin::Round: code_.push_back({Op::Round}); break;
                case Builtin::Cos: code_.push_back({Op::Cos}); break;
                case Builtin::Sin: code_.push_back({Op::Sin}); break;
                case Builtin::Abs: code_.push_back({Op::Abs}); break;
              }
            },
            [&](const auto&) { throw Error(ErrorCode::UnresolvedInput, "expression is not resolved: " + render(e)); },
        },
        e.node);
  }

  std::vector<Ins> code_;
  int max_depth_ = 0;
};

}  // namespace dtwt
