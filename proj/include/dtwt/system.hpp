#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dtwt/error.hpp"
#include "dtwt/program.hpp"
#include "dtwt/resolve.hpp"
#include "dtwt/schedule.hpp"

namespace dtwt {

struct StateDescriptor {
  std::string name;
  StateKind kind;
  int index;
};

struct AssembleOptions {
  /// Overrides of the anchor-time state box, by differential state name.
  std::map<std::string, std::pair<double, double>> initial_bounds;
};

/// The coupled system x' = f(t, x, y, s, p), y = g(t, x, s, p) with s the
/// zero-order-hold signals. Immutable once assembled.
class CompiledSystem {
 public:
  ResolvedModelSet resolved;
  std::vector<std::string> diff_names, alg_names, channels, writables, outputs;
  std::vector<ParamSlot> params;
  Eigen::VectorXd p_lower, p_upper, x0_lower, x0_upper, p_guess;

  int nx() const { return static_cast<int>(diff_names.size()); }
  int ny() const { return static_cast<int>(alg_names.size()); }
  int np() const { return static_cast<int>(params.size()); }
  int ns() const { return static_cast<int>(channels.size()); }
  int stack_size() const { return stack_size_; }

  std::optional<StateDescriptor> find_state(std::string_view name) const {
    for (int i = 0; i < nx(); ++i)
      if (diff_names[i] == name) return StateDescriptor{diff_names[i], StateKind::Differential, i};
    for (int i = 0; i < ny(); ++i)
      if (alg_names[i] == name) return StateDescriptor{alg_names[i], StateKind::Algebraic, i};
    return std::nullopt;
  }
  int channel_index(std::string_view name) const {
    for (int i = 0; i < ns(); ++i)
      if (channels[i] == name) return i;
    return -1;
  }
  /// State names in trajectory column order: differential, then algebraic.
  std::vector<std::string> state_names() const {
    std::vector<std::string> out = diff_names;
    out.insert(out.end(), alg_names.begin(), alg_names.end());
    return out;
  }
  /// Structural identity used to match fits and twins to a system.
  std::string signature() const {
    std::string s = resolved.listing();
    for (const auto& p : params) s += p.label() + ";";
    return s;
  }

  /// Signal values held at time t.
  Eigen::VectorXd signals_at(const ActionSchedule& schedule, double t) const {
    Eigen::VectorXd s(ns());
    for (int i = 0; i < ns(); ++i) s[i] = schedule.value(channels[i], t);
    return s;
  }

  void alg_into(const double* x, const double* s, const double* p, double* y, double* stack) const {
    for (int i : alg_order_) y[i] = alg_code_[i].eval(x, y, s, p, stack);
  }
  /// `y` receives the algebraic states as a by-product.
  void rhs_into(const double* x, const double* s, const double* p, double* y, double* dxdt, double* stack) const {
    alg_into(x, s, p, y, stack);
    for (int i = 0; i < nx(); ++i) dxdt[i] = rhs_code_[i].eval(x, y, s, p, stack);
  }

  void check_dims(const Eigen::VectorXd& x, const Eigen::VectorXd& p) const {
    if (x.size() != nx())
      throw Error(ErrorCode::DimensionMismatch, "state vector has " + std::to_string(x.size()) + " entries, expected " + std::to_string(nx()));
    if (p.size() != np())
      throw Error(ErrorCode::DimensionMismatch, "parameter vector has " + std::to_string(p.size()) + " entries, expected " + std::to_string(np()));
  }

 private:
  friend CompiledSystem assemble_system(const ResolvedModelSet&, const std::vector<std::string>&, const AssembleOptions&);
  std::vector<Program> rhs_code_, alg_code_;
  std::vector<int> alg_order_;
  int stack_size_ = 1;
};

inline CompiledSystem assemble_system(const ResolvedModelSet& resolved, const std::vector<std::string>& outputs,
                                      const AssembleOptions& options = {}) {
  CompiledSystem sys;
  sys.resolved = resolved;
  for (const auto& s : resolved.differential) sys.diff_names.push_back(s.name);
  for (const auto& s : resolved.algebraic) sys.alg_names.push_back(s.name);
  sys.channels = resolved.channels;
  sys.writables = resolved.writables;
  sys.params = resolved.params;
  for (const auto& o : outputs) {
    if (!sys.find_state(o)) throw Error(ErrorCode::UnknownOutput, "'" + o + "' is not a modeled state", o);
    sys.outputs.push_back(o);
  }

  const int np = sys.np(), nx = sys.nx();
  sys.p_lower.resize(np), sys.p_upper.resize(np), sys.p_guess.resize(np);
  for (int i = 0; i < np; ++i) {
    sys.p_lower[i] = sys.params[i].lower;
    sys.p_upper[i] = sys.params[i].upper;
    sys.p_guess[i] = sys.params[i].guess;
  }
  sys.x0_lower.resize(nx), sys.x0_upper.resize(nx);
  for (int i = 0; i < nx; ++i) {
    sys.x0_lower[i] = resolved.differential[i].init_lower;
    sys.x0_upper[i] = resolved.differential[i].init_upper;
  }
  for (const auto& [name, b] : options.initial_bounds) {
    auto d = sys.find_state(name);
    if (!d || d->kind != StateKind::Differential) throw Error(ErrorCode::UnknownState, "'" + name + "' is not a differential state", name);
    if (b.first > b.second) throw Error(ErrorCode::ConflictingBounds, "initial bounds of '" + name + "' are inverted", name);
    sys.x0_lower[d->index] = b.first;
    sys.x0_upper[d->index] = b.second;
  }

  std::map<std::string, int> ch;
  for (int i = 0; i < sys.ns(); ++i) ch[sys.channels[i]] = i;
  for (const auto& s : resolved.differential) sys.rhs_code_.emplace_back(s.expr, ch);
  for (const auto& s : resolved.algebraic) sys.alg_code_.emplace_back(s.expr, ch);
  sys.alg_order_ = resolved.algebraic_order;
  for (const auto& c : sys.rhs_code_) sys.stack_size_ = std::max(sys.stack_size_, c.max_depth());
  for (const auto& c : sys.alg_code_) sys.stack_size_ = std::max(sys.stack_size_, c.max_depth());
  return sys;
}

inline Eigen::VectorXd eval_algebraic(const CompiledSystem& sys, double t, const Eigen::VectorXd& x,
                                      const ActionSchedule& schedule, const Eigen::VectorXd& p) {
  sys.check_dims(x, p);
  const Eigen::VectorXd s = sys.signals_at(schedule, t);
  Eigen::VectorXd y(sys.ny());
  std::vector<double> stack(sys.stack_size());
  sys.alg_into(x.data(), s.data(), p.data(), y.data(), stack.data());
  return y;
}

inline Eigen::VectorXd eval_rhs(const CompiledSystem& sys, double t, const Eigen::VectorXd& x,
                                const ActionSchedule& schedule, const Eigen::VectorXd& p) {
  sys.check_dims(x, p);
  const Eigen::VectorXd s = sys.signals_at(schedule, t);
  Eigen::VectorXd y(sys.ny()), dxdt(sys.nx());
  std::vector<double> stack(sys.stack_size());
  sys.rhs_into(x.data(), s.data(), p.data(), y.data(), dxdt.data(), stack.data());
  return dxdt;
}

}  // namespace dtwt
