#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtwt/error.hpp"

namespace dtwt {

/// min ||r(v)||^2 subject to lower <= v <= upper.
struct LsqProblem {
  /// Returns false when r cannot be evaluated at v (e.g. the integration failed).
  std::function<bool(const Eigen::VectorXd& v, Eigen::VectorXd& r)> residual;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& v, const Eigen::VectorXd& r)> jacobian;
  Eigen::VectorXd lower, upper;
};

struct LsqOptions {
  int max_iterations = 200;  // accepted steps (Jacobian evaluations)
  double ftol = 1e-8;
  double xtol = 1e-8;
  double gtol = 1e-12;
  double eta = 1e-4;  // minimum ratio of actual to predicted reduction
  bool evaluate_only = false;
  std::function<void(const Eigen::VectorXd&)> on_trial;  // every point at which r is evaluated
};

struct LsqResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residual;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  int evaluations = 0;
  int jacobians = 0;
  std::vector<double> history;  // cost at the start and after every accepted step
  bool converged = false;
  std::string reason;
  double gradient_norm = 0.0;
};

namespace lsq_detail {

inline double sq(const Eigen::VectorXd& r) { return r.squaredNorm(); }

// Dogleg step in scaled variables for min ||r + A p||, ||p|| <= delta.
inline Eigen::VectorXd dogleg(const Eigen::MatrixXd& A, const Eigen::VectorXd& r, double delta) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  Eigen::VectorXd gn = -cod.solve(r);
  if (!gn.allFinite()) gn.setZero();
  if (gn.norm() <= delta) return gn;
  const Eigen::VectorXd g = A.transpose() * r;
  const double gAg = (A * g).squaredNorm();
  if (g.squaredNorm() == 0.0) return gn * (delta / gn.norm());
  const double alpha = gAg > 0.0 ? g.squaredNorm() / gAg : delta / g.norm();
  const Eigen::VectorXd pc = -alpha * g;
  const double pcn = pc.norm();
  if (pcn >= delta) return pc * (delta / pcn);
  // Walk from the Cauchy point toward the Gauss-Newton point up to the boundary.
  const Eigen::VectorXd d = gn - pc;
  const double a = d.squaredNorm(), b = 2.0 * pc.dot(d), c = pc.squaredNorm() - delta * delta;
  const double tau = (-b + std::sqrt(std::max(0.0, b * b - 4.0 * a * c))) / (2.0 * a);
  return pc + std::clamp(tau, 0.0, 1.0) * d;
}

// Reflect components that left the box back inside, then clamp.
inline Eigen::VectorXd reflect(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (out[i] < lo[i]) out[i] = lo[i] + (lo[i] - out[i]);
    if (out[i] > hi[i]) out[i] = hi[i] - (out[i] - hi[i]);
    out[i] = std::clamp(out[i], lo[i], hi[i]);
  }
  return out;
}

}  // namespace lsq_detail

/// Bound-constrained trust-region solver: dogleg subproblem on the free
/// variables, column-norm scaling, trial points reflected or projected into the box.
inline LsqResult solve_least_squares(const LsqProblem& prob, Eigen::VectorXd x0, const LsqOptions& opt = {}) {
  using Eigen::VectorXd;
  const Eigen::Index n = x0.size();
  if (prob.lower.size() != n || prob.upper.size() != n) throw Error(ErrorCode::DimensionMismatch, "bounds do not match the variables");
  if (opt.max_iterations < 1 && !opt.evaluate_only) throw Error(ErrorCode::InvalidConfig, "maxIterations must be >= 1");
  if (!(opt.ftol > 0.0) || !(opt.xtol > 0.0)) throw Error(ErrorCode::InvalidConfig, "tolerances must be positive");

  LsqResult res;
  VectorXd x = x0.cwiseMax(prob.lower).cwiseMin(prob.upper);
  VectorXd r;
  if (opt.on_trial) opt.on_trial(x);
  ++res.evaluations;
  if (!prob.residual(x, r)) throw Error(ErrorCode::IntegrationFailed, "residuals cannot be evaluated at the initial guess");
  double cost = lsq_detail::sq(r);
  res.history.push_back(cost);
  if (opt.evaluate_only) {
    res.x = x, res.residual = r, res.cost = cost, res.converged = true, res.reason = "evaluate-only";
    return res;
  }

  Eigen::MatrixXd J = prob.jacobian(x, r);
  ++res.jacobians;
  VectorXd D = J.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(D[i] > 0.0) || !std::isfinite(D[i])) D[i] = 1.0;
  double delta = (D.cwiseProduct(x)).norm();
  if (!(delta > 0.0)) delta = 1.0;

  int trials = 0;
  const int max_trials = 20 * opt.max_iterations + 20;
  for (;;) {
    const VectorXd g = J.transpose() * r;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = x[i] <= prob.lower[i] && g[i] > 0.0;
      const bool at_hi = x[i] >= prob.upper[i] && g[i] < 0.0;
      if (!at_lo && !at_hi) free.push_back(i);
    }
    double gnorm = 0.0;
    for (auto i : free) gnorm = std::max(gnorm, std::fabs(g[i]) / D[i]);
    res.gradient_norm = gnorm;
    if (free.empty() || gnorm <= opt.gtol * std::max(1.0, cost)) {
      res.converged = true;
      res.reason = "gtol";
      break;
    }
    if (res.iterations >= opt.max_iterations) {
      res.reason = "maxIterations";
      break;
    }
    if (++trials > max_trials) {
      res.reason = "maxTrials";
      break;
    }

    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd A(J.rows(), nf);
    for (Eigen::Index k = 0; k < nf; ++k) A.col(k) = J.col(free[k]) / D[free[k]];
    const VectorXd ps = lsq_detail::dogleg(A, r, delta);
    VectorXd dx = VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < nf; ++k) dx[free[k]] = ps[k] / D[free[k]];

    // Reflected or projected trial, whichever the linear model prefers; the
    // projection lands exactly on an active bound.
    VectorXd xt = lsq_detail::reflect(x + dx, prob.lower, prob.upper);
    const VectorXd xp = (x + dx).cwiseMax(prob.lower).cwiseMin(prob.upper);
    if ((r + J * (xp - x)).squaredNorm() < (r + J * (xt - x)).squaredNorm()) xt = xp;
    const VectorXd step = xt - x;
    const double step_norm = D.cwiseProduct(step).norm();
    const double xnorm = D.cwiseProduct(x).norm();
    const double pred = cost - (r + J * step).squaredNorm();

    VectorXd rt;
    if (opt.on_trial) opt.on_trial(xt);
    ++res.evaluations;
    bool ok = false;
    try {
      ok = prob.residual(xt, rt) && rt.allFinite();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::StepSizeUnderflow && e.code() != ErrorCode::IntegrationFailed && e.code() != ErrorCode::NumericDomain) throw;
      ok = false;  // failed trial points count as rejected steps
    }
    const double cost_t = ok ? lsq_detail::sq(rt) : std::numeric_limits<double>::infinity();
    const double ared = cost - cost_t;
    const double rho = pred > 0.0 ? ared / pred : (ared > 0.0 ? 1.0 : -1.0);

    if (rho < 0.25 || !ok) {
      delta = 0.25 * std::min(delta, std::max(step_norm, 1e-300));
    } else if (rho > 0.75 && step_norm >= 0.9 * delta) {
      delta = std::max(delta, 2.0 * step_norm);
    }

    if (ok && rho > opt.eta && ared > 0.0) {
      x = xt;
      r = rt;
      const double old = cost;
      cost = cost_t;
      ++res.iterations;
      res.history.push_back(cost);
      const bool f_conv = ared <= opt.ftol * old;
      const bool x_conv = step_norm <= opt.xtol * (opt.xtol + xnorm);
      if (f_conv || x_conv) {
        res.converged = true;
        res.reason = f_conv ? "ftol" : "xtol";
        break;
      }
      J = prob.jacobian(x, r);
      ++res.jacobians;
      const VectorXd Dn = J.colwise().norm().transpose();
      for (Eigen::Index i = 0; i < n; ++i)
        if (std::isfinite(Dn[i])) D[i] = std::max(D[i], Dn[i]);
    } else if (delta <= opt.xtol * (opt.xtol + xnorm)) {
      if (res.iterations == 0 && gnorm > 1e-8 * std::max(1.0, cost))
        throw Error(ErrorCode::NoProgress, "no step decreases the cost; gradient norm " + std::to_string(gnorm));
      res.converged = true;
      res.reason = "xtol";
      break;
    }
  }
  res.x = x;
  res.residual = r;
  res.cost = cost;
  return res;
}

}  // namespace dtwt
