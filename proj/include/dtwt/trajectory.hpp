#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/ode.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/system.hpp"

namespace dtwt {

enum class StepMode {
  Adaptive,  // error-controlled steps
  Fixed,     // constant step (convergence studies)
  Replay,    // reuse the step end times of an earlier run (smooth finite differences)
};

struct IntegratorOptions {
  OdeOptions ode;
  StepMode mode = StepMode::Adaptive;
  double fixed_step = 0.0;
  std::vector<double> grid;  // Replay: sorted step end times
  std::vector<std::vector<double>> grid_jac;  // Replay: iteration matrices per step (implicit stepper only)
};

/// Resumable integration of a compiled system from an anchor (t0, x0).
/// Steps are cut only at schedule breakpoints, so extending the horizon
/// later yields exactly the steps a single longer run would take.
class SystemIntegrator {
 public:
  SystemIntegrator(const CompiledSystem& sys, Eigen::VectorXd p, ActionSchedule schedule, double t0, Eigen::VectorXd x0,
                   IntegratorOptions opts = {})
      : sys_(&sys),
        p_(std::move(p)),
        schedule_(std::move(schedule)),
        opts_(std::move(opts)),
        t0_(t0),
        x0_(std::move(x0)),
        stepper_(sys.nx(), opts_.ode),
        ybuf_(std::max(sys.ny(), 1)),
        stack_(sys.stack_size()) {
    sys.check_dims(x0_, p_);
    if (!std::isfinite(t0_)) throw Error(ErrorCode::InvalidConfig, "anchor time is not finite");
    for (int i = 0; i < x0_.size(); ++i)
      if (!std::isfinite(x0_[i])) throw Error(ErrorCode::InvalidConfig, "initial state is not finite", sys.diff_names[i]);
    if (opts_.mode == StepMode::Fixed && !(opts_.fixed_step > 0.0))
      throw Error(ErrorCode::InvalidConfig, "fixed step must be positive");
    seg_start_ = t0_;
    s_ = sys.signals_at(schedule_, t0_);
    bps_ = schedule_.breakpoints(sys.channels, t0_, std::numeric_limits<double>::infinity());
    next_bp_ = 0;
    stepper_.start(t0_, x0_.data());
  }

  double anchor_time() const { return t0_; }
  const Eigen::VectorXd& anchor_state() const { return x0_; }
  double horizon() const { return stepper_.t(); }
  const std::vector<DenseStep>& steps() const { return steps_; }
  const ActionSchedule& schedule() const { return schedule_; }
  const Eigen::VectorXd& params() const { return p_; }
  const CompiledSystem& system() const { return *sys_; }
  long evaluations() const { return stepper_.evaluations(); }

  std::vector<double> grid() const {
    std::vector<double> g;
    g.reserve(steps_.size());
    for (const auto& s : steps_) g.push_back(s.t_end());
    return g;
  }

  /// Options that replay this run's steps (and iteration matrices).
  IntegratorOptions replay_options() const {
    IntegratorOptions o = opts_;
    o.mode = StepMode::Replay;
    o.grid = grid();
    o.grid_jac.clear();
    if (opts_.ode.method == OdeMethod::Rosenbrock)
      for (const auto& s : steps_) o.grid_jac.push_back(s.jac);
    return o;
  }

  /// Swaps in a schedule that agrees with the current one up to the horizon.
  /// Returns false (and changes nothing) otherwise; the caller must restart.
  bool try_update_schedule(const ActionSchedule& next) {
    const double h = horizon();
    for (const auto& ch : sys_->channels) {
      const bool a = schedule_.has(ch), b = next.has(ch);
      if (a != b) return false;
      if (!a) continue;
      auto head = [h](const ActionSchedule::Series& s) {
        ActionSchedule::Series out;
        for (const auto& bp : s)
          if (bp.first <= h) out.push_back(bp);
        return out;
      };
      const auto& sa = schedule_.series(ch);
      const auto& sb = next.series(ch);
      if (head(sa) != head(sb)) return false;
      if (sa.empty() != sb.empty()) return false;
      if (!sa.empty() && sa.front() != sb.front()) return false;  // first-value extension
    }
    schedule_ = next;
    bps_ = schedule_.breakpoints(sys_->channels, t0_, std::numeric_limits<double>::infinity());
    next_bp_ = static_cast<std::size_t>(std::upper_bound(bps_.begin(), bps_.end(), seg_start_) - bps_.begin());
    return true;
  }

  void advance_to(double t_target) {
    auto f = [this](double, const double* x, double* dxdt) {
      sys_->rhs_into(x, s_.data(), p_.data(), ybuf_.data(), dxdt, stack_.data());
    };
    while (stepper_.t() < t_target) {
      const double t = stepper_.t();
      if (next_bp_ < bps_.size() && bps_[next_bp_] <= t) {
        while (next_bp_ < bps_.size() && bps_[next_bp_] <= t) ++next_bp_;
        seg_start_ = t;
        s_ = sys_->signals_at(schedule_, t);
        stepper_.restart(t);
      }
      const double t_stop = next_bp_ < bps_.size() ? bps_[next_bp_] : std::numeric_limits<double>::infinity();
      DenseStep d;
      switch (opts_.mode) {
        case StepMode::Adaptive: d = stepper_.step(f, t_stop); break;
        case StepMode::Fixed:
          d = (t + opts_.fixed_step >= t_stop) ? stepper_.step_to(f, t_stop) : stepper_.step_fixed(f, opts_.fixed_step);
          break;
        case StepMode::Replay: {
          auto g = std::upper_bound(opts_.grid.begin(), opts_.grid.end(), t);
          if (g == opts_.grid.end()) {
            d = stepper_.step(f, t_stop);  // past the recorded grid
          } else {
            const auto gi = static_cast<std::size_t>(g - opts_.grid.begin());
            replay_to(f, std::min(*g, t_stop), 0, gi < opts_.grid_jac.size() ? &opts_.grid_jac[gi] : nullptr);
            continue;
          }
          break;
        }
      }
      steps_.push_back(std::move(d));
    }
  }

  // Replays one recorded interval. A perturbed run can be unstable on a grid
  // that suited the base run (e.g. a stiff state sitting exactly at rest), so
  // intervals with a gross error estimate are halved.
  template <class F>
  void replay_to(F& f, double t_next, int depth, const std::vector<double>* jac) {
    DenseStep d;
    if (stepper_.try_step_to(f, t_next, kReplayMaxErr, d, jac)) {
      steps_.push_back(std::move(d));
      return;
    }
    if (depth >= 40) throw Error(ErrorCode::StepSizeUnderflow, "replayed step cannot be resolved", "t=" + format_number(stepper_.t()));
    const double mid = stepper_.t() + 0.5 * (t_next - stepper_.t());
    replay_to(f, mid, depth + 1, jac);
    replay_to(f, t_next, depth + 1, jac);
  }
  static constexpr double kReplayMaxErr = 10.0;

  /// Differential state at t (t0 <= t <= horizon).
  Eigen::VectorXd diff_at(double t) const {
    Eigen::VectorXd out(sys_->nx());
    if (t == t0_ || steps_.empty()) {
      if (t != t0_) throw Error(ErrorCode::InsufficientCoverage, "time outside the integrated span");
      out = x0_;
      return out;
    }
    if (t < t0_ || t > horizon()) throw Error(ErrorCode::InsufficientCoverage, "time outside the integrated span");
    auto it = std::upper_bound(steps_.begin(), steps_.end(), t, [](double v, const DenseStep& s) { return v < s.t; });
    const DenseStep& s = *std::prev(it);
    s.eval(t, out.data());
    return out;
  }

  /// Differential then algebraic states at t.
  Eigen::VectorXd full_at(double t) const {
    const Eigen::VectorXd x = diff_at(t);
    const Eigen::VectorXd y = eval_algebraic(*sys_, t, x, schedule_, p_);
    Eigen::VectorXd out(x.size() + y.size());
    out << x, y;
    return out;
  }

 private:
  const CompiledSystem* sys_;
  Eigen::VectorXd p_;
  ActionSchedule schedule_;
  IntegratorOptions opts_;
  double t0_;
  Eigen::VectorXd x0_;
  Stepper stepper_;
  std::vector<double> ybuf_, stack_;
  Eigen::VectorXd s_;
  std::vector<double> bps_;
  std::size_t next_bp_ = 0;
  double seg_start_ = 0.0;
  std::vector<DenseStep> steps_;
};

struct Trajectory {
  std::vector<std::string> names;  // differential states, then algebraic
  int nx = 0;
  std::vector<double> times;
  Eigen::MatrixXd values;  // times.size() x names.size()
  std::vector<DenseStep> steps;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  Eigen::VectorXd series(std::string_view name) const {
    const int c = column(name);
    if (c < 0) throw Error(ErrorCode::UnknownState, "no column '" + std::string(name) + "'", std::string(name));
    return values.col(c);
  }
  /// Dense differential state at any t covered by the stored steps.
  Eigen::VectorXd diff_at(double t) const {
    if (steps.empty() || t < steps.front().t || t > steps.back().t_end())
      throw Error(ErrorCode::InsufficientCoverage, "time outside the integrated span");
    auto it = std::upper_bound(steps.begin(), steps.end(), t, [](double v, const DenseStep& s) { return v < s.t; });
    Eigen::VectorXd out(nx);
    std::prev(it)->eval(t, out.data());
    return out;
  }
};

inline Trajectory sample(const SystemIntegrator& run, const std::vector<double>& sample_times) {
  Trajectory tr;
  tr.names = run.system().state_names();
  tr.nx = run.system().nx();
  tr.times = sample_times;
  tr.values.resize(static_cast<Eigen::Index>(sample_times.size()), static_cast<Eigen::Index>(tr.names.size()));
  for (std::size_t k = 0; k < sample_times.size(); ++k) tr.values.row(static_cast<Eigen::Index>(k)) = run.full_at(sample_times[k]).transpose();
  tr.steps = run.steps();
  return tr;
}

/// Solves the initial value problem on span = [t0, tT] and samples it.
inline Trajectory integrate(const CompiledSystem& sys, const Eigen::VectorXd& x0, const Eigen::VectorXd& p,
                            const ActionSchedule& schedule, std::pair<double, double> span,
                            const std::vector<double>& sample_times, const IntegratorOptions& opts = {}) {
  const auto [t0, tT] = span;
  if (!(t0 <= tT)) throw Error(ErrorCode::InvalidConfig, "integration span is empty");
  for (std::size_t k = 0; k < sample_times.size(); ++k) {
    if (sample_times[k] < t0 || sample_times[k] > tT)
      throw Error(ErrorCode::InvalidConfig, "sample time outside the integration span", "sample " + std::to_string(k));
    if (k && sample_times[k] < sample_times[k - 1])
      throw Error(ErrorCode::InvalidConfig, "sample times must be sorted", "sample " + std::to_string(k));
  }
  SystemIntegrator run(sys, p, schedule, t0, x0, opts);
  run.advance_to(tT);
  return sample(run, sample_times);
}

// ---- export -----------------------------------------------------------

inline std::string trajectory_to_csv(const Trajectory& tr) {
  std::string out = "t";
  for (const auto& n : tr.names) out += "," + n;
  out += "\n";
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    out += format_number(tr.times[k]);
    for (Eigen::Index c = 0; c < tr.values.cols(); ++c) out += "," + format_number(tr.values(static_cast<Eigen::Index>(k), c));
    out += "\n";
  }
  return out;
}

inline nlohmann::json trajectory_to_json(const Trajectory& tr) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    nlohmann::json rec = {{"t", tr.times[k]}};
    for (std::size_t c = 0; c < tr.names.size(); ++c) rec[tr.names[c]] = tr.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
    out.push_back(std::move(rec));
  }
  return out;
}

namespace csv_detail {
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline std::optional<double> number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) throw std::invalid_argument(cell);
  return v;
}
}  // namespace csv_detail

/// Reads the export of trajectory_to_csv (no dense steps). `nx` is unknown
/// from the file and left at the column count.
inline Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Trajectory tr;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaMismatch, "empty trajectory file", "row 1");
  auto header = csv_detail::split(line);
  if (header.empty() || header[0] != "t") throw Error(ErrorCode::SchemaMismatch, "first column must be 't'", "row 1");
  tr.names.assign(header.begin() + 1, header.end());
  tr.nx = static_cast<int>(tr.names.size());
  std::vector<std::vector<double>> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = csv_detail::split(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::SchemaMismatch, "expected " + std::to_string(header.size()) + " cells", "row " + std::to_string(row));
    std::vector<double> r;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        auto v = csv_detail::number(cells[c]);
        if (!v) throw std::invalid_argument("empty");
        r.push_back(*v);
      } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::SchemaMismatch, "not a number: '" + cells[c] + "'", "row " + std::to_string(row) + " column " + header[c]);
      }
    }
    if (!tr.times.empty() && !(r[0] > tr.times.back()))
      throw Error(ErrorCode::NonMonotoneTime, "time is not strictly increasing", "row " + std::to_string(row));
    tr.times.push_back(r[0]);
    rows.push_back(std::move(r));
  }
  tr.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(tr.names.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t c = 0; c < tr.names.size(); ++c) tr.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = rows[k][c + 1];
  return tr;
}

}  // namespace dtwt
