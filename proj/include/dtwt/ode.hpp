#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dtwt/error.hpp"

namespace dtwt {

enum class OdeMethod {
  DormandPrince,  // explicit 5(4)
  Rosenbrock,     // linearly implicit 2(3), for stiff systems
};

struct OdeOptions {
  OdeMethod method = OdeMethod::DormandPrince;
  double rtol = 1e-6;
  double atol = 1e-8;
  double h_init = 0.0;  // 0 = automatic
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 5'000'000;
};

/// One accepted step with its continuous extension (4th-order Hermite-type
/// interpolant of the 5(4) pair).
struct DenseStep {
  double t = 0.0;
  double h = 0.0;
  double t1 = 0.0;         // exact end time (t + h up to rounding)
  std::vector<double> r;   // 5 * n coefficients
  std::vector<double> y1;  // state at t1
  std::vector<double> jac;  // iteration matrix used by implicit steps (row-major), empty otherwise

  double t_end() const { return t1; }
  int n() const { return static_cast<int>(y1.size()); }

  void eval(double tq, double* out) const {
    const int dim = n();
    if (tq == t_end()) {
      std::copy(y1.begin(), y1.end(), out);
      return;
    }
    const double th = (tq - t) / h, th1 = 1.0 - th;
    for (int i = 0; i < dim; ++i)
      out[i] = r[i] + th * (r[dim + i] + th1 * (r[2 * dim + i] + th * (r[3 * dim + i] + th1 * r[4 * dim + i])));
  }
};

/// Dormand-Prince 5(4) with FSAL, error control and dense output.
class DormandPrince {
 public:
  DormandPrince(int n, OdeOptions opt)
      : n_(n), opt_(opt), x_(n), k_(7, std::vector<double>(n)), tmp_(n), y1_(n), dy_(n), comp_(n) {}

  /// (Re)starts from (t, x). The step proposal survives restarts; the
  /// first-same-as-last stage does not, since the right-hand side may have changed.
  void start(double t, const double* x) {
    t_ = t;
    std::copy(x, x + n_, x_.begin());
    std::fill(comp_.begin(), comp_.end(), 0.0);
    have_k1_ = false;
  }

  /// Restart at the current state (keeps the rounding compensation).
  void restart(double t) {
    t_ = t;
    have_k1_ = false;
  }

  double t() const { return t_; }
  const std::vector<double>& x() const { return x_; }
  double proposal() const { return h_; }
  long evaluations() const { return nfev_; }
  long rejected() const { return nrej_; }

  /// One accepted adaptive step, never past t_stop (landing on it exactly).
  template <class F>
  DenseStep step(F&& f, double t_stop) {
    ensure_k1(f);
    if (h_ <= 0.0) h_ = opt_.h_init > 0.0 ? opt_.h_init : initial_step(f);
    bool rejected_before = false;
    for (;;) {
      double h = std::min(h_, opt_.h_max);
      bool lands = false;
      if (t_ + h >= t_stop) {
        h = t_stop - t_;
        lands = true;
      }
      if (!(h > 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(t_))))
        throw Error(ErrorCode::StepSizeUnderflow, "step size underflow", "t=" + num(t_));
      if (++attempts_ > opt_.max_steps) throw Error(ErrorCode::IntegrationFailed, "step budget exhausted", "t=" + num(t_));

      const bool finite = stages(f, h);
      double err = std::numeric_limits<double>::infinity();
      if (finite) err = error_norm(h);
      if (err <= 1.0) {
        double fac = err == 0.0 ? kFacMax : std::clamp(kSafety * std::pow(err, -0.2), kFacMin, kFacMax);
        if (rejected_before) fac = std::min(fac, 1.0);
        compensate();
        DenseStep d = dense(h);
        // A step shortened to land on t_stop says little about the natural step size.
        if (!lands) h_ = h * fac;
        t_ = lands ? t_stop : t_ + h;
        d.t1 = t_;
        std::swap(x_, y1_);
        std::swap(k_[0], k_[6]);  // FSAL
        return d;
      }
      ++nrej_;
      rejected_before = true;
      h_ = finite ? h * std::max(kFacMin, kSafety * std::pow(err, -0.2)) : 0.25 * h;
    }
  }

  /// One step of exactly h with no error control.
  template <class F>
  DenseStep step_fixed(F&& f, double h) {
    ensure_k1(f);
    if (!stages(f, h)) throw Error(ErrorCode::IntegrationFailed, "non-finite state in fixed step", "t=" + num(t_));
    compensate();
    DenseStep d = dense(h);
    t_ += h;
    d.t1 = t_;
    std::swap(x_, y1_);
    std::swap(k_[0], k_[6]);
    return d;
  }

  /// Fixed step to t_next, committed only if the local error estimate is at
  /// most `max_err` (in tolerance units); otherwise nothing changes.
  template <class F>
  bool try_step_to(F&& f, double t_next, double max_err, DenseStep& out) {
    ensure_k1(f);
    const double h = t_next - t_;
    if (!stages(f, h) || !(error_norm(h) <= max_err)) return false;
    compensate();
    out = dense(h);
    t_ = t_next;
    out.t1 = t_next;
    std::swap(x_, y1_);
    std::swap(k_[0], k_[6]);
    return true;
  }

  /// Like step_fixed but lands exactly on t_next.
  template <class F>
  DenseStep step_to(F&& f, double t_next) {
    const double h = t_next - t_;
    DenseStep d = step_fixed(f, h);
    t_ = t_next;
    d.t1 = t_next;
    return d;
  }

 private:
  static constexpr double kSafety = 0.9, kFacMin = 0.2, kFacMax = 10.0;

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }

  template <class F>
  void ensure_k1(F& f) {
    if (have_k1_) return;
    f(t_, x_.data(), k_[0].data());
    ++nfev_;
    have_k1_ = true;
  }

  double scale(double a, double b) const { return opt_.atol + opt_.rtol * std::max(std::fabs(a), std::fabs(b)); }

  template <class F>
  double initial_step(F& f) {
    double d0 = 0, d1 = 0;
    for (int i = 0; i < n_; ++i) {
      const double sc = scale(x_[i], x_[i]);
      d0 += (x_[i] / sc) * (x_[i] / sc);
      d1 += (k_[0][i] / sc) * (k_[0][i] / sc);
    }
    d0 = std::sqrt(d0 / std::max(n_, 1));
    d1 = std::sqrt(d1 / std::max(n_, 1));
    const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    for (int i = 0; i < n_; ++i) tmp_[i] = x_[i] + h0 * k_[0][i];
    f(t_ + h0, tmp_.data(), k_[1].data());
    ++nfev_;
    double d2 = 0;
    for (int i = 0; i < n_; ++i) {
      const double sc = scale(x_[i], x_[i]);
      const double v = (k_[1][i] - k_[0][i]) / sc;
      d2 += v * v;
    }
    d2 = std::sqrt(d2 / std::max(n_, 1)) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    double h = std::min(100.0 * h0, h1);
    if (!std::isfinite(h) || h <= 0.0) h = 1e-6;
    return h;
  }

  // Computes k2..k7 and y1; false when any value is non-finite.
  template <class F>
  bool stages(F& f, double h) {
    const auto& k1 = k_[0];
    auto& k2 = k_[1];
    auto& k3 = k_[2];
    auto& k4 = k_[3];
    auto& k5 = k_[4];
    auto& k6 = k_[5];
    auto& k7 = k_[6];
    const double* x = x_.data();
    for (int i = 0; i < n_; ++i) tmp_[i] = x[i] + h * (a21 * k1[i]);
    f(t_ + c2 * h, tmp_.data(), k2.data());
    for (int i = 0; i < n_; ++i) tmp_[i] = x[i] + h * (a31 * k1[i] + a32 * k2[i]);
    f(t_ + c3 * h, tmp_.data(), k3.data());
    for (int i = 0; i < n_; ++i) tmp_[i] = x[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    f(t_ + c4 * h, tmp_.data(), k4.data());
    for (int i = 0; i < n_; ++i) tmp_[i] = x[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    f(t_ + c5 * h, tmp_.data(), k5.data());
    for (int i = 0; i < n_; ++i) tmp_[i] = x[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    f(t_ + h, tmp_.data(), k6.data());
    for (int i = 0; i < n_; ++i) {
      dy_[i] = h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
      y1_[i] = x[i] + dy_[i];
    }
    f(t_ + h, y1_.data(), k7.data());
    nfev_ += 6;
    for (int i = 0; i < n_; ++i)
      if (!std::isfinite(y1_[i]) || !std::isfinite(k7[i])) return false;
    return true;
  }

  // Compensated (Kahan) update of the accepted state; keeps rounding from
  // piling up over long runs, which matters for finite differences.
  void compensate() {
    for (int i = 0; i < n_; ++i) {
      const double d = dy_[i] + comp_[i];
      const double xn = x_[i] + d;
      comp_[i] = d - (xn - x_[i]);
      y1_[i] = xn;
    }
  }

  double error_norm(double h) const {
    if (n_ == 0) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double e = h * (e1 * k_[0][i] + e3 * k_[2][i] + e4 * k_[3][i] + e5 * k_[4][i] + e6 * k_[5][i] + e7 * k_[6][i]);
      const double v = e / scale(x_[i], y1_[i]);
      acc += v * v;
    }
    return std::sqrt(acc / n_);
  }

  DenseStep dense(double h) const {
    DenseStep d;
    d.t = t_;
    d.h = h;
    d.r.resize(5 * n_);
    d.y1 = y1_;
    for (int i = 0; i < n_; ++i) {
      const double dy = y1_[i] - x_[i];
      const double bspl = h * k_[0][i] - dy;
      d.r[i] = x_[i];
      d.r[n_ + i] = dy;
      d.r[2 * n_ + i] = bspl;
      d.r[3 * n_ + i] = dy - h * k_[6][i] - bspl;
      d.r[4 * n_ + i] = h * (d1 * k_[0][i] + d3 * k_[2][i] + d4 * k_[3][i] + d5 * k_[4][i] + d6 * k_[5][i] + d7 * k_[6][i]);
    }
    return d;
  }

  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                          d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                          d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

  int n_;
  OdeOptions opt_;
  double t_ = 0.0;
  double h_ = 0.0;
  bool have_k1_ = false;
  long nfev_ = 0, nrej_ = 0, attempts_ = 0;
  std::vector<double> x_;
  std::vector<std::vector<double>> k_;
  std::vector<double> tmp_, y1_, dy_, comp_;
};


/// Rosenbrock 2(3) pair (the modified formula of Shampine and Reichelt) with
/// a finite-difference Jacobian of the right-hand side, which must be
/// autonomous between restarts. The quadratic continuous extension is stored
/// in the same coefficient layout as DenseStep.
class Rosenbrock23 {
 public:
  Rosenbrock23(int n, OdeOptions opt)
      : n_(n), opt_(opt), x_(n), f0_(n), f1_(n), f2_(n), y1_(n), tmp_(n), comp_(n), J_(n, n), T_(n), k1_(n), k2_(n), k3_(n) {}

  void start(double t, const double* x) {
    t_ = t;
    std::copy(x, x + n_, x_.begin());
    std::fill(comp_.begin(), comp_.end(), 0.0);
    have_f0_ = have_j_ = have_t_ = false;
  }
  void restart(double t) {
    t_ = t;
    have_f0_ = have_j_ = have_t_ = false;
  }

  double t() const { return t_; }
  const std::vector<double>& x() const { return x_; }
  double proposal() const { return h_; }
  long evaluations() const { return nfev_; }
  long rejected() const { return nrej_; }

  template <class F>
  DenseStep step(F&& f, double t_stop) {
    ensure_f0(f);
    ensure_jacobian(f);
    ensure_dfdt(f);
    if (h_ <= 0.0) h_ = opt_.h_init > 0.0 ? opt_.h_init : initial_step();
    bool rejected_before = false;
    for (;;) {
      double h = std::min(h_, opt_.h_max);
      bool lands = false;
      if (t_ + h >= t_stop) {
        h = t_stop - t_;
        lands = true;
      }
      if (!(h > 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(t_))))
        throw Error(ErrorCode::StepSizeUnderflow, "step size underflow", "t=" + num(t_));
      if (++attempts_ > opt_.max_steps) throw Error(ErrorCode::IntegrationFailed, "step budget exhausted", "t=" + num(t_));
      const bool finite = stages(f, h, J_);
      const double err = finite ? error_norm(h) : std::numeric_limits<double>::infinity();
      if (err <= 1.0) {
        double fac = err == 0.0 ? kFacMax : std::clamp(kSafety * std::pow(err, -1.0 / 3.0), kFacMin, kFacMax);
        if (rejected_before) fac = std::min(fac, 1.0);
        if (!lands) h_ = h * fac;
        return commit(h, lands ? t_stop : t_ + h, J_);
      }
      ++nrej_;
      rejected_before = true;
      h_ = finite ? h * std::max(kFacMin, kSafety * std::pow(err, -1.0 / 3.0)) : 0.25 * h;
    }
  }

  template <class F>
  DenseStep step_fixed(F&& f, double h) {
    ensure_f0(f);
    ensure_jacobian(f);
    ensure_dfdt(f);
    if (!stages(f, h, J_)) throw Error(ErrorCode::IntegrationFailed, "non-finite state in fixed step", "t=" + num(t_));
    return commit(h, t_ + h, J_);
  }

  template <class F>
  DenseStep step_to(F&& f, double t_next) {
    return step_fixed(f, t_next - t_);
  }

  /// Fixed step to t_next with the given iteration matrix (or a fresh one when
  /// `jac` is null), committed only if the error estimate is at most `max_err`.
  template <class F>
  bool try_step_to(F&& f, double t_next, double max_err, DenseStep& out, const std::vector<double>* jac = nullptr) {
    ensure_f0(f);
    Eigen::MatrixXd Jgiven;
    const Eigen::MatrixXd* J = &J_;
    if (jac && static_cast<int>(jac->size()) == n_ * n_) {
      Jgiven = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(jac->data(), n_, n_);
      J = &Jgiven;
    } else {
      ensure_jacobian(f);
    }
    ensure_dfdt(f);
    const double h = t_next - t_;
    if (!stages(f, h, *J) || !(error_norm(h) <= max_err)) return false;
    out = commit(h, t_next, *J);
    return true;
  }

 private:
  static constexpr double kSafety = 0.9, kFacMin = 0.2, kFacMax = 5.0;
  static constexpr double d_ = 0.29289321881345248;   // 1 / (2 + sqrt 2)
  static constexpr double e32_ = 7.4142135623730950;  // 6 + sqrt 2

  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }

  template <class F>
  void ensure_f0(F& f) {
    if (have_f0_) return;
    f(t_, x_.data(), f0_.data());
    ++nfev_;
    have_f0_ = true;
  }

  template <class F>
  void ensure_jacobian(F& f) {
    if (have_j_) return;
    for (int j = 0; j < n_; ++j) {
      tmp_ = x_;
      const double dx = 1.4901161193847656e-8 * std::max(std::fabs(x_[j]), 1.0);
      tmp_[j] += dx;
      f(t_, tmp_.data(), f1_.data());
      ++nfev_;
      for (int i = 0; i < n_; ++i) J_(i, j) = (f1_[i] - f0_[i]) / (tmp_[j] - x_[j]);
    }
    have_j_ = true;
  }

  // df/dt by forward difference; zero for systems driven only by piecewise
  // constant inputs, which steps never straddle.
  template <class F>
  void ensure_dfdt(F& f) {
    if (have_t_) return;
    const double dt = 1.4901161193847656e-8 * std::max(std::fabs(t_), 1.0);
    f(t_ + dt, x_.data(), f1_.data());
    ++nfev_;
    for (int i = 0; i < n_; ++i) T_[i] = (f1_[i] - f0_[i]) / ((t_ + dt) - t_);
    have_t_ = true;
  }

  double scale(double a, double b) const { return opt_.atol + opt_.rtol * std::max(std::fabs(a), std::fabs(b)); }

  double initial_step() const {
    double d0 = 0, d1 = 0;
    for (int i = 0; i < n_; ++i) {
      const double sc = scale(x_[i], x_[i]);
      d0 += (x_[i] / sc) * (x_[i] / sc);
      d1 += (f0_[i] / sc) * (f0_[i] / sc);
    }
    d0 = std::sqrt(d0 / std::max(n_, 1));
    d1 = std::sqrt(d1 / std::max(n_, 1));
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    return std::isfinite(h) && h > 0.0 ? h : 1e-6;
  }

  template <class F>
  bool stages(F& f, double h, const Eigen::MatrixXd& J) {
    const Eigen::Map<const Eigen::VectorXd> x(x_.data(), n_), F0(f0_.data(), n_);
    Eigen::Map<Eigen::VectorXd> F1(f1_.data(), n_), F2(f2_.data(), n_), y1(y1_.data(), n_);
    const Eigen::PartialPivLU<Eigen::MatrixXd> W(Eigen::MatrixXd::Identity(n_, n_) - (h * d_) * J);
    k1_ = W.solve(F0 + (h * d_) * T_);
    Eigen::VectorXd y = x + 0.5 * h * k1_;
    f(t_ + 0.5 * h, y.data(), f1_.data());
    k2_ = W.solve(F1 - k1_) + k1_;
    y1 = x + h * k2_;
    f(t_ + h, y1_.data(), f2_.data());
    k3_ = W.solve(F2 - e32_ * (k2_ - F1) - 2.0 * (k1_ - F0) + (h * d_) * T_);
    nfev_ += 2;
    return y1.allFinite() && F2.allFinite() && k3_.allFinite();
  }

  double error_norm(double h) const {
    if (n_ == 0) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double e = h / 6.0 * (k1_[i] - 2.0 * k2_[i] + k3_[i]);
      const double v = e / scale(x_[i], y1_[i]);
      acc += v * v;
    }
    return std::sqrt(acc / n_);
  }

  DenseStep commit(double h, double t_new, const Eigen::MatrixXd& J) {
    for (int i = 0; i < n_; ++i) {
      const double dd = h * k2_[i] + comp_[i];
      const double xn = x_[i] + dd;
      comp_[i] = dd - (xn - x_[i]);
      y1_[i] = xn;
    }
    DenseStep d;
    d.t = t_;
    d.h = h;
    d.t1 = t_new;
    d.y1 = y1_;
    d.r.assign(5 * n_, 0.0);
    for (int i = 0; i < n_; ++i) {
      d.r[i] = x_[i];
      d.r[n_ + i] = h * k2_[i];
      d.r[2 * n_ + i] = h * (k1_[i] - k2_[i]) / (1.0 - 2.0 * d_);
    }
    d.jac.resize(static_cast<std::size_t>(n_) * n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) d.jac[static_cast<std::size_t>(i) * n_ + j] = J(i, j);
    t_ = t_new;
    std::swap(x_, y1_);
    std::swap(f0_, f2_);  // f at the new point
    have_j_ = have_t_ = false;
    return d;
  }

  int n_;
  OdeOptions opt_;
  double t_ = 0.0;
  double h_ = 0.0;
  bool have_f0_ = false, have_j_ = false, have_t_ = false;
  long nfev_ = 0, nrej_ = 0, attempts_ = 0;
  std::vector<double> x_, f0_, f1_, f2_, y1_, tmp_, comp_;
  Eigen::MatrixXd J_;
  Eigen::VectorXd T_, k1_, k2_, k3_;
};

/// Runtime choice between the explicit and the linearly implicit stepper.
class Stepper {
 public:
  Stepper(int n, const OdeOptions& opt) {
    if (opt.method == OdeMethod::Rosenbrock) impl_.emplace<Rosenbrock23>(n, opt);
    else impl_.emplace<DormandPrince>(n, opt);
  }
  void start(double t, const double* x) {
    std::visit([&](auto& s) { s.start(t, x); }, impl_);
  }
  void restart(double t) {
    std::visit([&](auto& s) { s.restart(t); }, impl_);
  }
  double t() const {
    return std::visit([](const auto& s) { return s.t(); }, impl_);
  }
  const std::vector<double>& x() const {
    return std::visit([](const auto& s) -> const std::vector<double>& { return s.x(); }, impl_);
  }
  long evaluations() const {
    return std::visit([](const auto& s) { return s.evaluations(); }, impl_);
  }
  template <class F>
  DenseStep step(F&& f, double t_stop) {
    return std::visit([&](auto& s) { return s.step(f, t_stop); }, impl_);
  }
  template <class F>
  DenseStep step_fixed(F&& f, double h) {
    return std::visit([&](auto& s) { return s.step_fixed(f, h); }, impl_);
  }
  template <class F>
  DenseStep step_to(F&& f, double t_next) {
    return std::visit([&](auto& s) { return s.step_to(f, t_next); }, impl_);
  }
  template <class F>
  bool try_step_to(F&& f, double t_next, double max_err, DenseStep& out, const std::vector<double>* jac = nullptr) {
    if (auto* r = std::get_if<Rosenbrock23>(&impl_)) return r->try_step_to(f, t_next, max_err, out, jac);
    return std::get<DormandPrince>(impl_).try_step_to(f, t_next, max_err, out);
  }

 private:
  std::variant<DormandPrince, Rosenbrock23> impl_{std::in_place_type<DormandPrince>, 0, OdeOptions{}};
};

}  // namespace dtwt
