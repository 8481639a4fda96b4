#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/learning.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/system.hpp"
#include "dtwt/thing_description.hpp"
#include "dtwt/trajectory.hpp"

namespace dtwt {

/// Where a twin starts: time, differential state, and the value each action
/// channel holds at that time.
struct TwinAnchor {
  double t = 0.0;
  Eigen::VectorXd state;
  std::map<std::string, double> signals;
};

/// Anchor on the fitted model's own forecast at time t (e.g. the last training
/// observation), with channel values taken from `schedule`.
inline TwinAnchor anchor_from_fit(const CompiledSystem& sys, const FitResult& fit, const ActionSchedule& schedule, double t,
                                  const OdeOptions& ode = {}) {
  if (t < fit.t0) throw Error(ErrorCode::TimeBeforeAnchor, "anchor precedes the fit's initial time");
  TwinAnchor a;
  a.t = t;
  if (t == fit.t0) {
    a.state = fit.initial_state;
  } else {
    auto run = forecast_run(sys, fit, schedule, ode);
    run.advance_to(t);
    a.state = run.diff_at(t);
  }
  for (const auto& ch : sys.channels)
    if (schedule.has(ch) && !schedule.series(ch).empty()) a.signals[ch] = schedule.value(ch, t);
  return a;
}

struct GeoFence {
  double center_x = 0.0, center_y = 0.0;
  double radius = 1.0;
  std::string x_state = "positionX", y_state = "positionY";

  bool contains(double x, double y) const { return std::hypot(x - center_x, y - center_y) <= radius; }
};

struct WhatIfResult {
  Trajectory trajectory;
  Eigen::VectorXd final_state;
  std::optional<bool> inside_fence;
  std::optional<std::string> alert;
};

struct PrecisionReport {
  int true_positives = 0;
  int false_positives = 0;
  std::optional<double> precision;  // empty when nothing was predicted positive
  double look_ahead = 0.0;
  double threshold = 0.0;
  int sample_count = 0;
};

/// A spawned digital twin: the TD's interface served from the fitted model.
class TwinState {
 public:
  TwinState(std::string id, std::shared_ptr<const ThingDescription> td, std::shared_ptr<const CompiledSystem> sys,
            Eigen::VectorXd params, TwinAnchor anchor, OdeOptions ode = {})
      : id_(std::move(id)), td_(std::move(td)), sys_(std::move(sys)), params_(std::move(params)), ode_(ode) {
    if (!td_ || !sys_) throw Error(ErrorCode::InvalidConfig, "twin needs a TD and a system");
    if (params_.size() != sys_->np()) throw Error(ErrorCode::SystemMismatch, "parameter vector does not fit the system");
    rebase(std::move(anchor));
  }

  const std::string& id() const { return id_; }
  const ThingDescription& td() const { return *td_; }
  const CompiledSystem& system() const { return *sys_; }
  std::shared_ptr<const CompiledSystem> system_ptr() const { return sys_; }
  std::shared_ptr<const ThingDescription> td_ptr() const { return td_; }
  const Eigen::VectorXd& params() const { return params_; }
  double anchor_time() const { return anchor_.t; }
  const Eigen::VectorXd& anchor_state() const { return anchor_.state; }
  const std::map<std::string, double>& anchor_signals() const { return anchor_.signals; }
  double virtual_time() const { return virtual_time_; }
  const ActionSchedule& pending_actions() const { return pending_; }
  const OdeOptions& ode() const { return ode_; }
  bool cache_enabled() const { return use_cache_; }
  void set_cache_enabled(bool on) {
    use_cache_ = on;
    if (!on) cache_.reset();
  }

  /// Channel values at the anchor held forever, with the pending actions on top.
  ActionSchedule effective_schedule() const { return base_schedule().overlay(pending_); }

  double read_property(const std::string& name, std::optional<double> at = std::nullopt) {
    const PropertySpec* p = td_->property(name);
    if (!p) throw Error(ErrorCode::UnknownProperty, "no property '" + name + "'", name);
    const double t = at.value_or(virtual_time_);
    check_time(t);
    if (auto st = sys_->find_state(name)) {
      const Eigen::VectorXd full = state_at(t);
      return full[st->kind == StateKind::Differential ? st->index : sys_->nx() + st->index];
    }
    if (sys_->channel_index(name) >= 0 || p->writable()) return channel_value(name, t);
    throw Error(ErrorCode::UnknownProperty, "property '" + name + "' has neither a model nor a schedule", name);
  }

  /// Differential then algebraic states at t.
  Eigen::VectorXd state_at(double t) {
    check_time(t);
    if (!use_cache_) {
      SystemIntegrator run = fresh_run(effective_schedule());
      run.advance_to(t);
      return run.full_at(t);
    }
    if (!cache_) cache_.emplace(fresh_run(effective_schedule()));
    if (cache_->horizon() < t) cache_->advance_to(t);
    return cache_->full_at(t);
  }

  void write_property(const std::string& name, double value, std::optional<double> at = std::nullopt) {
    const PropertySpec* p = td_->property(name);
    if (!p) throw Error(ErrorCode::UnknownProperty, "no property '" + name + "'", name);
    if (!p->writable()) throw Error(ErrorCode::ReadOnlyProperty, "property '" + name + "' is read-only", name);
    if (!std::isfinite(value)) throw Error(ErrorCode::InvalidActions, "value must be finite", name);
    const double t = at.value_or(virtual_time_);
    if (t < virtual_time_) throw Error(ErrorCode::TimeInPast, "cannot write before the virtual time", name);
    pending_.set(name, t, value);
    if (cache_ && !cache_->try_update_schedule(effective_schedule())) cache_.reset();
  }

  void set_time(double t) {
    check_time(t);
    virtual_time_ = t;
  }

  /// Rebases the twin on a snapshot; components not given are carried over
  /// from the twin's own prediction at t.
  void resync(double t, const std::map<std::string, double>& snapshot, bool clear_actions) {
    for (const auto& [name, v] : snapshot) {
      auto st = sys_->find_state(name);
      if (!st || st->kind != StateKind::Differential)
        throw Error(ErrorCode::UnknownState, "'" + name + "' is not a differential state", name);
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "snapshot value is not finite", name);
    }
    check_time(t);
    TwinAnchor next;
    next.t = t;
    next.state = state_at(t).head(sys_->nx());
    for (const auto& [name, v] : snapshot) next.state[sys_->find_state(name)->index] = v;
    const ActionSchedule eff = effective_schedule();
    for (const auto& ch : sys_->channels)
      if (eff.has(ch) && !eff.series(ch).empty()) next.signals[ch] = eff.value(ch, t);
    if (clear_actions) pending_ = ActionSchedule();
    rebase(std::move(next));
  }

  /// Evaluates `actions` on top of the pending ones over [virtualTime,
  /// virtualTime + t_la] without touching the twin.
  WhatIfResult what_if(const ActionSchedule& actions, double t_la, const std::optional<GeoFence>& fence = std::nullopt,
                       int samples = 100) const {
    if (!(t_la > 0.0) || !std::isfinite(t_la)) throw Error(ErrorCode::InvalidActions, "look-ahead must be positive");
    if (samples < 1) throw Error(ErrorCode::InvalidConfig, "sample count must be >= 1");
    const double t0 = virtual_time_, t1 = virtual_time_ + t_la;
    for (const auto& [name, s] : actions.channels()) {
      const PropertySpec* p = td_->property(name);
      if (!p) throw Error(ErrorCode::UnknownProperty, "no property '" + name + "'", name);
      if (!p->writable()) throw Error(ErrorCode::ReadOnlyProperty, "property '" + name + "' is read-only", name);
      for (const auto& [t, v] : s)
        if (t < t0 || t > t1) throw Error(ErrorCode::InvalidActions, "action outside [virtualTime, virtualTime + t_la]", name);
    }
    if (fence) {
      if (!(fence->radius > 0.0)) throw Error(ErrorCode::InvalidConfig, "fence radius must be positive");
      for (const auto& n : {fence->x_state, fence->y_state})
        if (!sys_->find_state(n)) throw Error(ErrorCode::UnknownState, "fence state '" + n + "' is not modeled", n);
    }
    SystemIntegrator run = fresh_run(effective_schedule().overlay(actions));
    run.advance_to(t1);
    std::vector<double> times;
    for (int k = 0; k <= samples; ++k) times.push_back(k == samples ? t1 : t0 + t_la * k / samples);
    WhatIfResult out;
    out.trajectory = sample(run, times);
    out.final_state = run.full_at(t1);
    if (fence) {
      const auto names = sys_->state_names();
      const int ix = out.trajectory.column(fence->x_state), iy = out.trajectory.column(fence->y_state);
      const double x = out.final_state[ix], y = out.final_state[iy];
      out.inside_fence = fence->contains(x, y);
      if (!*out.inside_fence)
        out.alert = "predicted position (" + format_number(x) + ", " + format_number(y) + ") at t=" + format_number(t1) +
                    " lies outside the geo-fence of radius " + format_number(fence->radius);
    }
    return out;
  }

  nlohmann::json snapshot() const {
    nlohmann::json state = nlohmann::json::object(), signals = nlohmann::json::object(), params = nlohmann::json::array();
    for (int i = 0; i < sys_->nx(); ++i) state[sys_->diff_names[i]] = anchor_.state[i];
    for (const auto& [k, v] : anchor_.signals) signals[k] = v;
    for (int i = 0; i < params_.size(); ++i) params.push_back({{"label", sys_->params[i].label()}, {"value", params_[i]}});
    return {{"twinId", id_},
            {"anchor", {{"t", anchor_.t}, {"state", state}, {"signals", signals}}},
            {"params", params},
            {"virtualTime", virtual_time_},
            {"actions", pending_.to_json()},
            {"signature", sys_->signature()}};
  }

  /// Inverse of snapshot() for a twin of the same system.
  static TwinState from_snapshot(const nlohmann::json& j, std::shared_ptr<const ThingDescription> td,
                                 std::shared_ptr<const CompiledSystem> sys, OdeOptions ode = {}) {
    try {
      if (j.value("signature", sys->signature()) != sys->signature())
        throw Error(ErrorCode::SystemMismatch, "snapshot belongs to a different system");
      Eigen::VectorXd p(sys->np());
      const auto& ps = j.at("params");
      if (static_cast<int>(ps.size()) != sys->np()) throw Error(ErrorCode::SystemMismatch, "parameter count differs");
      for (int i = 0; i < sys->np(); ++i) p[i] = ps[static_cast<std::size_t>(i)].at("value").get<double>();
      TwinAnchor a;
      a.t = j.at("anchor").at("t").get<double>();
      a.state.resize(sys->nx());
      for (int i = 0; i < sys->nx(); ++i) a.state[i] = j.at("anchor").at("state").at(sys->diff_names[i]).get<double>();
      const nlohmann::json signals = j.at("anchor").value("signals", nlohmann::json::object());
      for (const auto& [k, v] : signals.items()) a.signals[k] = v.get<double>();
      TwinState tw(j.at("twinId").get<std::string>(), std::move(td), std::move(sys), p, a, ode);
      tw.pending_ = ActionSchedule::from_json(j.value("actions", nlohmann::json::object()));
      tw.virtual_time_ = j.value("virtualTime", a.t);
      if (tw.virtual_time_ < a.t) throw Error(ErrorCode::TimeBeforeAnchor, "virtual time precedes the anchor");
      return tw;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, std::string("malformed twin snapshot: ") + e.what());
    }
  }

 private:
  void check_time(double t) const {
    if (!std::isfinite(t)) throw Error(ErrorCode::TimeBeforeAnchor, "time is not finite");
    if (t < anchor_.t) throw Error(ErrorCode::TimeBeforeAnchor, "time " + format_number(t) + " precedes the anchor " + format_number(anchor_.t));
  }

  void rebase(TwinAnchor a) {
    if (a.state.size() != sys_->nx()) throw Error(ErrorCode::DimensionMismatch, "anchor state has the wrong size");
    for (const auto& [k, v] : a.signals)
      if (sys_->channel_index(k) < 0) throw Error(ErrorCode::UnknownChannel, "anchor signal '" + k + "' is not a channel", k);
    anchor_ = std::move(a);
    virtual_time_ = anchor_.t;
    cache_.reset();
  }

  ActionSchedule base_schedule() const {
    ActionSchedule base;
    for (const auto& ch : sys_->channels) {
      auto it = anchor_.signals.find(ch);
      base.set(ch, anchor_.t, it == anchor_.signals.end() ? 0.0 : it->second);
    }
    return base;
  }

  double channel_value(const std::string& name, double t) const {
    const ActionSchedule eff = effective_schedule();
    if (eff.has(name)) return eff.value(name, t);
    auto it = anchor_.signals.find(name);
    return it == anchor_.signals.end() ? 0.0 : it->second;
  }

  SystemIntegrator fresh_run(const ActionSchedule& schedule) const {
    IntegratorOptions io;
    io.ode = ode_;
    return SystemIntegrator(*sys_, params_, schedule, anchor_.t, anchor_.state, io);
  }

  std::string id_;
  std::shared_ptr<const ThingDescription> td_;
  std::shared_ptr<const CompiledSystem> sys_;
  Eigen::VectorXd params_;
  OdeOptions ode_;
  TwinAnchor anchor_;
  double virtual_time_ = 0.0;
  ActionSchedule pending_;
  bool use_cache_ = true;
  std::optional<SystemIntegrator> cache_;
};

/// Spawns a twin of `sys` from a fit made on the same system.
inline TwinState spawn_twin(std::string id, std::shared_ptr<const ThingDescription> td, std::shared_ptr<const CompiledSystem> sys,
                            const FitResult& fit, TwinAnchor anchor, OdeOptions ode = {}) {
  if (fit.signature != sys->signature())
    throw Error(ErrorCode::SystemMismatch, "the fit was made on a different system (model listing or parameter layout differs)");
  return TwinState(std::move(id), std::move(td), std::move(sys), fit.params, std::move(anchor), ode);
}

/// Row-wise linear interpolation of a sampled trajectory (exact on samples).
inline Eigen::VectorXd interpolate_rows(const Trajectory& tr, double t) {
  if (tr.times.empty() || t < tr.times.front() || t > tr.times.back())
    throw Error(ErrorCode::InsufficientCoverage, "time " + format_number(t) + " outside the trajectory");
  auto it = std::lower_bound(tr.times.begin(), tr.times.end(), t);
  const auto k = static_cast<Eigen::Index>(it - tr.times.begin());
  if (*it == t) return tr.values.row(k).transpose();
  const double t0 = tr.times[static_cast<std::size_t>(k - 1)], t1 = *it;
  const double w = (t - t0) / (t1 - t0);
  return ((1.0 - w) * tr.values.row(k - 1) + w * tr.values.row(k)).transpose();
}

/// Geo-fence precision: at each sample time the twin is rebased on the truth
/// and forecasts t + t_la; a positive is a forecast inside the circle of
/// radius d_thr around the true position at t.
inline PrecisionReport evaluate_precision(const Trajectory& truth, const TwinState& twin, const std::vector<double>& sample_times,
                                          double t_la, double d_thr, const std::string& x_state = "positionX",
                                          const std::string& y_state = "positionY") {
  if (!(t_la >= 0.0) || !(d_thr > 0.0)) throw Error(ErrorCode::InvalidConfig, "t_la must be >= 0 and d_thr > 0");
  const int cx = truth.column(x_state), cy = truth.column(y_state);
  if (cx < 0 || cy < 0) throw Error(ErrorCode::UnknownState, "truth lacks the position columns");
  std::vector<std::pair<std::string, int>> carried;
  for (const auto& n : twin.system().diff_names)
    if (int c = truth.column(n); c >= 0) carried.emplace_back(n, c);
  PrecisionReport rep;
  rep.look_ahead = t_la;
  rep.threshold = d_thr;
  rep.sample_count = static_cast<int>(sample_times.size());
  for (double t : sample_times) {
    const Eigen::VectorXd now = interpolate_rows(truth, t), later = interpolate_rows(truth, t + t_la);
    TwinState tw = twin;
    std::map<std::string, double> snap;
    for (const auto& [n, c] : carried) snap[n] = now[c];
    tw.resync(t, snap, false);
    const double px = tw.read_property(x_state, t + t_la), py = tw.read_property(y_state, t + t_la);
    const bool predicted_inside = std::hypot(px - now[cx], py - now[cy]) <= d_thr;
    const bool truly_inside = std::hypot(later[cx] - now[cx], later[cy] - now[cy]) <= d_thr;
    if (predicted_inside) ++(truly_inside ? rep.true_positives : rep.false_positives);
  }
  if (rep.true_positives + rep.false_positives > 0)
    rep.precision = static_cast<double>(rep.true_positives) / (rep.true_positives + rep.false_positives);
  return rep;
}

inline nlohmann::json to_json(const PrecisionReport& r) {
  return {{"truePositives", r.true_positives},
          {"falsePositives", r.false_positives},
          {"precision", r.precision ? nlohmann::json(*r.precision) : nlohmann::json(nullptr)},
          {"defined", r.precision.has_value()},
          {"lookAhead", r.look_ahead},
          {"threshold", r.threshold},
          {"sampleCount", r.sample_count}};
}

inline nlohmann::json to_json(const WhatIfResult& w) {
  nlohmann::json out = {{"trajectory", trajectory_to_json(w.trajectory)}};
  nlohmann::json fin = nlohmann::json::object();
  for (std::size_t i = 0; i < w.trajectory.names.size(); ++i) fin[w.trajectory.names[i]] = w.final_state[static_cast<Eigen::Index>(i)];
  out["finalState"] = fin;
  out["insideFence"] = w.inside_fence ? nlohmann::json(*w.inside_fence) : nlohmann::json(nullptr);
  out["alert"] = w.alert ? nlohmann::json(*w.alert) : nlohmann::json(nullptr);
  return out;
}

}  // namespace dtwt
