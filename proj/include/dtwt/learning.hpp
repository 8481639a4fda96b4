#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/least_squares.hpp"
#include "dtwt/observations.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/system.hpp"
#include "dtwt/trajectory.hpp"

namespace dtwt {

struct FitConfig {
  int max_iterations = 200;
  double ftol = 1e-8;
  double xtol = 1e-8;
  double fd_rel_step = 1.4901161193847656e-8;  // sqrt(machine epsilon)
  bool fix_initial_state = false;
  bool evaluate_only = false;
  std::optional<Eigen::VectorXd> seed_guess;   // overrides the TD guesses
  std::optional<Eigen::VectorXd> x0_guess;     // overrides the first-observation start
  std::map<std::string, double> weights;       // per observed state, default 1
  OdeOptions ode;
  std::function<void(const Eigen::VectorXd& p, const Eigen::VectorXd& x0)> on_trial;

  void validate() const {
    if (max_iterations < 1) throw Error(ErrorCode::InvalidConfig, "maxIterations must be >= 1");
    if (!(ftol > 0.0) || !(xtol > 0.0)) throw Error(ErrorCode::InvalidConfig, "ftol and xtol must be positive");
    if (!(fd_rel_step > 0.0)) throw Error(ErrorCode::InvalidConfig, "fdRelStep must be positive");
    if (!(ode.rtol > 0.0) || !(ode.atol > 0.0)) throw Error(ErrorCode::InvalidConfig, "integrator tolerances must be positive");
    for (const auto& [k, w] : weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidConfig, "weight of '" + k + "' must be finite and >= 0");
  }
};

struct FitResult {
  std::vector<std::string> labels;
  Eigen::VectorXd params;
  Eigen::VectorXd lower, upper;
  std::vector<std::string> state_names;
  Eigen::VectorXd initial_state;
  double t0 = 0.0;
  double t_end = 0.0;  // last training observation
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int evaluations = 0;
  std::vector<double> cost_history;
  bool converged = false;
  std::string reason;
  std::optional<double> test_mse;
  std::string signature;  // CompiledSystem::signature of the system it was fitted on
  std::string td_hash;
  std::vector<std::string> warnings;
};

namespace learn_detail {

struct Layout {
  // (observation row, trajectory column, weight) per residual entry
  struct Entry {
    std::size_t k;
    int state_col;
    int obs_col;
    double w;
  };
  std::vector<Entry> entries;
  bool needs_algebraic = false;
};

inline Layout layout(const CompiledSystem& sys, const ObservationSet& obs, const std::map<std::string, double>& weights) {
  for (const auto& n : obs.names())
    if (!sys.find_state(n)) throw Error(ErrorCode::UnknownState, "observed '" + n + "' is not a state of the system", n);
  for (const auto& [n, w] : weights)
    if (!sys.find_state(n)) throw Error(ErrorCode::UnknownState, "weight for unknown state '" + n + "'", n);
  Layout L;
  const auto names = sys.state_names();
  for (std::size_t k = 0; k < obs.size(); ++k)
    for (int c = 0; c < static_cast<int>(names.size()); ++c) {
      const int oc = obs.column(names[c]);
      if (oc < 0 || !obs.get(k, oc)) continue;
      auto wi = weights.find(names[c]);
      L.entries.push_back({k, c, oc, wi == weights.end() ? 1.0 : wi->second});
      if (c >= sys.nx()) L.needs_algebraic = true;
    }
  return L;
}

inline Eigen::VectorXd residuals_from(const SystemIntegrator& run, const CompiledSystem& sys, const ObservationSet& obs,
                                      const Layout& L) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(L.entries.size()));
  std::size_t cached_k = static_cast<std::size_t>(-1);
  Eigen::VectorXd state;
  for (std::size_t e = 0; e < L.entries.size(); ++e) {
    const auto& en = L.entries[e];
    if (en.k != cached_k) {
      state = L.needs_algebraic ? run.full_at(obs.times()[en.k]) : run.diff_at(obs.times()[en.k]);
      cached_k = en.k;
    }
    r[static_cast<Eigen::Index>(e)] = en.w * (state[en.state_col] - *obs.get(en.k, en.obs_col));
  }
  (void)sys;
  return r;
}

inline void check_box(const char* what, const Eigen::VectorXd& v, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                      Eigen::VectorXd& out) {
  out = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(v[i]));
    if (v[i] < lo[i] - slack || v[i] > hi[i] + slack)
      throw Error(ErrorCode::InvalidConfig, std::string(what) + " component " + std::to_string(i) + " lies outside its bounds");
    out[i] = std::clamp(v[i], lo[i], hi[i]);
  }
}

}  // namespace learn_detail

/// Stacked weighted prediction errors H(t_k) - obs_k, ordered by time, then
/// by state declaration order. The integration starts at the first observation time.
inline Eigen::VectorXd compute_residuals(const CompiledSystem& sys, const ObservationSet& obs, const ActionSchedule& schedule,
                                         const Eigen::VectorXd& p, const Eigen::VectorXd& x0, const FitConfig& cfg = {}) {
  if (obs.empty()) throw Error(ErrorCode::InsufficientCoverage, "no observations");
  sys.check_dims(x0, p);
  Eigen::VectorXd pc, xc;
  learn_detail::check_box("parameter", p, sys.p_lower, sys.p_upper, pc);
  learn_detail::check_box("initial state", x0, sys.x0_lower, sys.x0_upper, xc);
  const auto L = learn_detail::layout(sys, obs, cfg.weights);
  IntegratorOptions io;
  io.ode = cfg.ode;
  SystemIntegrator run(sys, pc, schedule, obs.times().front(), xc, io);
  run.advance_to(obs.times().back());
  return learn_detail::residuals_from(run, sys, obs, L);
}

/// Forward-difference Jacobian of compute_residuals with respect to the
/// parameters and, if `with_x0`, the initial state. Perturbed integrations
/// replay the step grid of the unperturbed one, so differences are smooth.
inline Eigen::MatrixXd finite_difference_jacobian(const CompiledSystem& sys, const ObservationSet& obs,
                                                  const ActionSchedule& schedule, const Eigen::VectorXd& p,
                                                  const Eigen::VectorXd& x0, const FitConfig& cfg = {}, bool with_x0 = true) {
  if (obs.empty()) throw Error(ErrorCode::InsufficientCoverage, "no observations");
  sys.check_dims(x0, p);
  const auto L = learn_detail::layout(sys, obs, cfg.weights);
  const double t0 = obs.times().front(), tT = obs.times().back();
  IntegratorOptions io;
  io.ode = cfg.ode;
  SystemIntegrator base(sys, p, schedule, t0, x0, io);
  base.advance_to(tT);
  const IntegratorOptions replay = base.replay_options();

  auto run_at = [&](const Eigen::VectorXd& pp, const Eigen::VectorXd& xx) {
    SystemIntegrator run(sys, pp, schedule, t0, xx, replay);
    run.advance_to(tT);
    return learn_detail::residuals_from(run, sys, obs, L);
  };
  const Eigen::VectorXd r0 = run_at(p, x0);
  const Eigen::Index np = p.size(), nx = with_x0 ? x0.size() : 0;
  Eigen::MatrixXd J(r0.size(), np + nx);
  for (Eigen::Index j = 0; j < np + nx; ++j) {
    const bool is_p = j < np;
    const Eigen::Index i = is_p ? j : j - np;
    const double v = is_p ? p[i] : x0[i];
    const double lo = is_p ? sys.p_lower[i] : sys.x0_lower[i];
    const double hi = is_p ? sys.p_upper[i] : sys.x0_upper[i];
    double h = cfg.fd_rel_step * std::max(std::fabs(v), 1.0);
    if (v + h > hi) {
      // Backward difference at an active upper bound (or a box narrower than h).
      h = (v - h >= lo) ? -h : (hi - v >= v - lo ? hi - v : lo - v);
    }
    if (h == 0.0) {
      J.col(j).setZero();
      continue;
    }
    Eigen::VectorXd pp = p, xx = x0;
    (is_p ? pp[i] : xx[i]) = v + h;
    const double actual = (v + h) - v;
    J.col(j) = (run_at(pp, xx) - r0) / actual;
  }
  return J;
}

/// Starting point of the initial-state variables: the earliest observation
/// of each observed differential state, zero (projected into the box) otherwise.
inline Eigen::VectorXd initial_state_guess(const CompiledSystem& sys, const ObservationSet& obs) {
  Eigen::VectorXd x(sys.nx());
  for (int i = 0; i < sys.nx(); ++i) {
    double v = 0.0;
    const int c = obs.column(sys.diff_names[i]);
    if (c >= 0)
      for (std::size_t k = 0; k < obs.size(); ++k)
        if (auto o = obs.get(k, c)) {
          v = *o;
          break;
        }
    x[i] = std::clamp(v, sys.x0_lower[i], sys.x0_upper[i]);
  }
  return x;
}

inline FitResult fit_parameters(const CompiledSystem& sys, const ObservationSet& obs, const ActionSchedule& schedule,
                                const FitConfig& cfg = {}) {
  cfg.validate();
  if (obs.empty()) throw Error(ErrorCode::InsufficientCoverage, "no observations to fit");
  const auto L = learn_detail::layout(sys, obs, cfg.weights);
  if (L.entries.empty()) throw Error(ErrorCode::InsufficientCoverage, "no observed values of any state");

  FitResult out;
  for (const auto& s : sys.params) out.labels.push_back(s.label());
  out.lower = sys.p_lower;
  out.upper = sys.p_upper;
  out.state_names = sys.diff_names;
  out.t0 = obs.times().front();
  out.t_end = obs.times().back();
  out.signature = sys.signature();

  Eigen::VectorXd p0 = cfg.seed_guess ? *cfg.seed_guess : sys.p_guess;
  if (p0.size() != sys.np()) throw Error(ErrorCode::DimensionMismatch, "guess has the wrong number of parameters");
  for (Eigen::Index i = 0; i < p0.size(); ++i)
    if (p0[i] < sys.p_lower[i] || p0[i] > sys.p_upper[i]) {
      out.warnings.push_back("guess for " + out.labels[i] + " projected onto its bounds");
      p0[i] = std::clamp(p0[i], sys.p_lower[i], sys.p_upper[i]);
    }
  Eigen::VectorXd x0 = cfg.x0_guess ? *cfg.x0_guess : initial_state_guess(sys, obs);
  if (x0.size() != sys.nx()) throw Error(ErrorCode::DimensionMismatch, "initial state guess has the wrong size");
  x0 = x0.cwiseMax(sys.x0_lower).cwiseMin(sys.x0_upper);

  const Eigen::Index np = sys.np(), nx = cfg.fix_initial_state ? 0 : sys.nx();
  auto split = [&](const Eigen::VectorXd& v, Eigen::VectorXd& p, Eigen::VectorXd& x) {
    p = v.head(np);
    x = cfg.fix_initial_state ? x0 : Eigen::VectorXd(v.tail(nx));
  };

  LsqProblem prob;
  prob.lower.resize(np + nx);
  prob.upper.resize(np + nx);
  prob.lower.head(np) = sys.p_lower;
  prob.upper.head(np) = sys.p_upper;
  if (nx > 0) prob.lower.tail(nx) = sys.x0_lower, prob.upper.tail(nx) = sys.x0_upper;
  prob.residual = [&](const Eigen::VectorXd& v, Eigen::VectorXd& r) {
    Eigen::VectorXd p, x;
    split(v, p, x);
    try {
      IntegratorOptions io;
      io.ode = cfg.ode;
      SystemIntegrator run(sys, p, schedule, out.t0, x, io);
      run.advance_to(out.t_end);
      r = learn_detail::residuals_from(run, sys, obs, L);
      return r.allFinite();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::StepSizeUnderflow || e.code() == ErrorCode::IntegrationFailed || e.code() == ErrorCode::NumericDomain)
        return false;
      throw;
    }
  };
  prob.jacobian = [&](const Eigen::VectorXd& v, const Eigen::VectorXd&) {
    Eigen::VectorXd p, x;
    split(v, p, x);
    return finite_difference_jacobian(sys, obs, schedule, p, x, cfg, !cfg.fix_initial_state);
  };

  LsqOptions lo;
  lo.max_iterations = cfg.max_iterations;
  lo.ftol = cfg.ftol;
  lo.xtol = cfg.xtol;
  lo.evaluate_only = cfg.evaluate_only;
  if (cfg.on_trial)
    lo.on_trial = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd p, x;
      split(v, p, x);
      cfg.on_trial(p, x);
    };

  Eigen::VectorXd v0(np + nx);
  v0.head(np) = p0;
  if (nx > 0) v0.tail(nx) = x0;
  const LsqResult res = solve_least_squares(prob, v0, lo);
  split(res.x, out.params, out.initial_state);
  out.initial_cost = res.history.front();
  out.final_cost = res.cost;
  out.iterations = res.iterations;
  out.evaluations = res.evaluations;
  out.cost_history = res.history;
  out.converged = res.converged;
  out.reason = res.reason;
  return out;
}

/// Warm-started sequence of fits: round i starts from round i-1's parameters.
/// A failing round ends the chain; earlier results are kept in `partial`.
struct ContinuousFitError : Error {
  std::vector<FitResult> partial;
  ContinuousFitError(const Error& e, std::vector<FitResult> done) : Error(e), partial(std::move(done)) {}
};

inline std::vector<FitResult> continuous_fit(const CompiledSystem& sys,
                                             const std::vector<std::pair<ObservationSet, ActionSchedule>>& rounds,
                                             const FitConfig& cfg = {}) {
  if (rounds.empty()) throw Error(ErrorCode::InvalidConfig, "no training rounds");
  std::vector<FitResult> out;
  FitConfig c = cfg;
  for (const auto& [obs, sched] : rounds) {
    try {
      out.push_back(fit_parameters(sys, obs, sched, c));
    } catch (const Error& e) {
      throw ContinuousFitError(e, out);
    }
    c.seed_guess = out.back().params;
  }
  return out;
}

/// Forecast of the fitted model carried on from its own training trajectory.
inline SystemIntegrator forecast_run(const CompiledSystem& sys, const FitResult& fit, const ActionSchedule& schedule,
                                     const OdeOptions& ode = {}) {
  IntegratorOptions io;
  io.ode = ode;
  return SystemIntegrator(sys, fit.params, schedule, fit.t0, fit.initial_state, io);
}

/// Mean over test samples of the squared error on each designated output
/// (pooled over outputs). The model runs on from the training anchor.
inline double heldout_mse(const CompiledSystem& sys, const FitResult& fit, const ActionSchedule& schedule,
                          const ObservationSet& test, const std::vector<std::string>& outputs, const OdeOptions& ode = {}) {
  if (test.empty()) throw Error(ErrorCode::InsufficientCoverage, "empty held-out set");
  SystemIntegrator run = forecast_run(sys, fit, schedule, ode);
  run.advance_to(test.times().back());
  std::vector<std::pair<int, int>> cols;
  const auto names = sys.state_names();
  for (const auto& o : outputs) {
    auto it = std::find(names.begin(), names.end(), o);
    if (it == names.end()) throw Error(ErrorCode::UnknownOutput, "'" + o + "' is not a state", o);
    cols.push_back({static_cast<int>(it - names.begin()), test.column(o)});
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    if (test.times()[k] < fit.t0) continue;
    Eigen::VectorXd s;
    for (const auto& [sc, oc] : cols) {
      if (oc < 0) continue;
      auto v = test.get(k, oc);
      if (!v) continue;
      if (s.size() == 0) s = run.full_at(test.times()[k]);
      acc += (s[sc] - *v) * (s[sc] - *v);
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::InsufficientCoverage, "held-out set has no values of the designated outputs");
  return acc / static_cast<double>(n);
}

// ---- serialization ----------------------------------------------------

namespace learn_detail {
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline double num_or(const nlohmann::json& j, double fallback) { return j.is_number() ? j.get<double>() : fallback; }
}  // namespace learn_detail

inline nlohmann::json to_json(const FitResult& f) {
  using learn_detail::num;
  nlohmann::json params = nlohmann::json::array();
  for (Eigen::Index i = 0; i < f.params.size(); ++i)
    params.push_back({{"label", f.labels[i]}, {"value", f.params[i]}, {"lower", num(f.lower[i])}, {"upper", num(f.upper[i])}});
  nlohmann::json x0 = nlohmann::json::array();
  for (Eigen::Index i = 0; i < f.initial_state.size(); ++i) x0.push_back({{"name", f.state_names[i]}, {"value", f.initial_state[i]}});
  nlohmann::json out = {
      {"params", params},
      {"initialState", x0},
      {"t0", f.t0},
      {"tEnd", f.t_end},
      {"initialCost", f.initial_cost},
      {"finalCost", f.final_cost},
      {"iterations", f.iterations},
      {"evaluations", f.evaluations},
      {"costHistory", f.cost_history},
      {"converged", f.converged},
      {"reason", f.reason},
      {"testMse", f.test_mse ? nlohmann::json(*f.test_mse) : nlohmann::json(nullptr)},
      {"signature", f.signature},
      {"tdHash", f.td_hash},
      {"warnings", f.warnings},
  };
  return out;
}

inline FitResult fit_from_json(const nlohmann::json& j) {
  try {
    FitResult f;
    const auto& ps = j.at("params");
    const auto np = static_cast<Eigen::Index>(ps.size());
    f.params.resize(np), f.lower.resize(np), f.upper.resize(np);
    for (Eigen::Index i = 0; i < np; ++i) {
      const auto& e = ps[static_cast<std::size_t>(i)];
      f.labels.push_back(e.at("label").get<std::string>());
      f.params[i] = e.at("value").get<double>();
      f.lower[i] = learn_detail::num_or(e.value("lower", nlohmann::json()), -INFINITY);
      f.upper[i] = learn_detail::num_or(e.value("upper", nlohmann::json()), INFINITY);
    }
    const auto& xs = j.at("initialState");
    f.initial_state.resize(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      f.state_names.push_back(xs[i].at("name").get<std::string>());
      f.initial_state[static_cast<Eigen::Index>(i)] = xs[i].at("value").get<double>();
    }
    f.t0 = j.at("t0").get<double>();
    f.t_end = j.value("tEnd", f.t0);
    f.initial_cost = j.value("initialCost", 0.0);
    f.final_cost = j.value("finalCost", 0.0);
    f.iterations = j.value("iterations", 0);
    f.evaluations = j.value("evaluations", 0);
    f.cost_history = j.value("costHistory", std::vector<double>{});
    f.converged = j.value("converged", false);
    f.reason = j.value("reason", "");
    if (j.contains("testMse") && j["testMse"].is_number()) f.test_mse = j["testMse"].get<double>();
    f.signature = j.value("signature", "");
    f.td_hash = j.value("tdHash", "");
    f.warnings = j.value("warnings", std::vector<std::string>{});
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("malformed fit result: ") + e.what());
  }
}

}  // namespace dtwt
