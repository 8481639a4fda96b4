#pragma once

#include <algorithm>
#include <array>
#include <tuple>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/observations.hpp"
#include "dtwt/ode.hpp"
#include "dtwt/rng.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/trace_io.hpp"
#include "dtwt/trajectory.hpp"

namespace dtwt {

/// Output of a ground-truth simulator. `trace` holds what a device would
/// record (columns named after TD properties: sensors plus the writable
/// switches and setpoints); `truth` holds every simulator variable without noise.
struct SimulationResult {
  Trajectory truth;
  Trace trace;
  ObservationSet obs;
  ActionSchedule actions;
};

namespace sim_detail {

// Integrates x' = f(x, u) over segments whose ends include every sample time;
// `inputs(t)` is evaluated once per segment start (zero-order hold).
template <class F, class U>
std::vector<std::vector<double>> run_segments(int n, std::vector<double> x, const std::vector<double>& samples,
                                              const std::vector<double>& extra_breaks, F&& f, U&& inputs, const OdeOptions& ode) {
  std::set<double> cuts(samples.begin(), samples.end());
  for (double b : extra_breaks)
    if (b > samples.front() && b < samples.back()) cuts.insert(b);
  std::vector<double> grid(cuts.begin(), cuts.end());
  std::vector<std::vector<double>> out;
  DormandPrince dp(n, ode);
  std::size_t next_sample = 0;
  double t = grid.front();
  dp.start(t, x.data());
  if (samples[next_sample] == t) out.push_back(x), ++next_sample;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const auto u = inputs(t);
    auto rhs = [&](double, const double* xs, double* d) { f(xs, u, d); };
    dp.restart(t);
    while (dp.t() < grid[g]) dp.step(rhs, grid[g]);
    t = grid[g];
    if (next_sample < samples.size() && samples[next_sample] == t) out.push_back(dp.x()), ++next_sample;
  }
  return out;
}

inline std::vector<double> sample_grid(double duration, double period) {
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor(duration / period + 1e-9));
  for (long k = 0; k <= n; ++k) out.push_back(static_cast<double>(k) * period);
  return out;
}

}  // namespace sim_detail

// ---- smart home ---------------------------------------------------------

struct RoomSimConfig {
  // beta_1 .. beta_9
  std::array<double, 9> beta{0.001, 0.1, 0.1, 0.002, 0.1, 0.001, 1.0, 0.5, 0.1};
  double t_out_mean = 15.0;
  double t_out_sigma = 0.1;
  double noise_mu = 0.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;
  double duration = 48 * 3600.0;
  double sample_period = 300.0;
  double t_a0 = 15.0, t_b0 = 15.0, h_a0 = 0.0, h_b0 = 0.0;
};

/// Heater switch and cooler setpoint used by the room experiments.
inline std::pair<ActionSchedule, ActionSchedule> default_room_schedule() {
  constexpr double h = 3600.0;
  ActionSchedule bh, cref;
  bh.set_series("heaterSwitch", {{0, 0}, {1 * h, 1}, {6 * h, 0}, {12 * h, 1}, {18 * h, 0}, {24 * h, 1}, {27 * h, 0},
                                 {31 * h, 1}, {36 * h, 0}, {40 * h, 1}, {44 * h, 0}});
  cref.set_series("coolerSetpoint", {{0, 0}, {3 * h, 4}, {5 * h, 0}, {14 * h, 9}, {20 * h, 0}, {28 * h, 6}, {32 * h, 0},
                                     {38 * h, 9}, {42 * h, 0}, {45 * h, 3}, {47 * h, 0}});
  return {bh, cref};
}

/// Ground truth for the two-room environment: first-order heaters, an
/// instantaneous cooler, outdoor temperature with per-sample noise.
/// `bh` and `cref` each carry exactly one channel (any name).
inline SimulationResult simulate_room(const RoomSimConfig& cfg, const ActionSchedule& bh, const ActionSchedule& cref) {
  if (!(cfg.sample_period > 0.0) || !(cfg.duration > 0.0)) throw Error(ErrorCode::InvalidSimulation, "duration and samplePeriod must be positive");
  if (!(cfg.noise_sigma >= 0.0) || !(cfg.t_out_sigma >= 0.0)) throw Error(ErrorCode::InvalidSimulation, "noise sigma must be >= 0");
  if (bh.channels().size() != 1 || cref.channels().size() != 1)
    throw Error(ErrorCode::InvalidSimulation, "heater and cooler schedules need exactly one channel each");
  const auto& bh_s = bh.channels().begin()->second;
  const auto& cr_s = cref.channels().begin()->second;
  for (const auto& [t, v] : bh_s)
    if (v != 0.0 && v != 1.0) throw Error(ErrorCode::InvalidSimulation, "heater switch must be 0 or 1", "t=" + format_number(t));
  for (const auto& [t, v] : cr_s)
    if (v < 0.0 || v > 9.0 || v != std::round(v))
      throw Error(ErrorCode::InvalidSimulation, "cooler setpoint must be an integer in [0, 9]", "t=" + format_number(t));
  const std::string bh_name = bh.channels().begin()->first, cr_name = cref.channels().begin()->first;

  const auto samples = sim_detail::sample_grid(cfg.duration, cfg.sample_period);
  std::vector<double> breaks;
  for (const auto& [t, v] : bh_s) breaks.push_back(t);
  for (const auto& [t, v] : cr_s) breaks.push_back(t);

  const CounterRng out_rng(cfg.seed, 1), na_rng(cfg.seed, 2), nb_rng(cfg.seed, 3);
  auto t_out = [&](double t) {
    const auto k = static_cast<std::uint64_t>(std::floor(t / cfg.sample_period + 1e-9));
    return cfg.t_out_mean + cfg.t_out_sigma * out_rng.normal(k);
  };
  const auto& b = cfg.beta;
  auto rhs = [&](const double* x, const std::array<double, 3>& u, double* d) {
    const double ta = x[0], tb = x[1], ha = x[2], hb = x[3];
    const double tout = u[0], bhv = u[1], c = b[8] * u[2];
    d[0] = b[0] * (b[1] * (tout - ta) + ha - c + b[2] * (tb - ta));
    d[1] = b[3] * (b[4] * (tout - tb) + hb + b[2] * (ta - tb));
    d[2] = b[5] * (b[6] * bhv - ha);
    d[3] = b[5] * (b[7] * bhv - hb);
  };
  auto inputs = [&](double t) { return std::array<double, 3>{t_out(t), bh.value(bh_name, t), cref.value(cr_name, t)}; };
  OdeOptions ode;
  ode.rtol = 1e-10;
  ode.atol = 1e-12;
  const auto states = sim_detail::run_segments(4, {cfg.t_a0, cfg.t_b0, cfg.h_a0, cfg.h_b0}, samples, breaks, rhs, inputs, ode);

  SimulationResult res;
  res.truth.names = {"temperature", "temperature1", "heaterPowerA", "heaterPowerB", "coolerPower", "heater", "cooler", "outdoor"};
  res.truth.nx = 4;
  res.truth.times = samples;
  res.truth.values.resize(static_cast<Eigen::Index>(samples.size()), 8);
  res.trace.columns = {"temperature", "temperature1", "heater", "cooler"};
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double t = samples[k];
    const auto& x = states[k];
    const double sw = bh.value(bh_name, t), cr = cref.value(cr_name, t);
    res.truth.values.row(static_cast<Eigen::Index>(k)) << x[0], x[1], x[2], x[3], b[8] * cr, sw, cr, t_out(t);
    const double ta = x[0] + cfg.noise_mu + cfg.noise_sigma * na_rng.normal(k);
    const double tb = x[1] + cfg.noise_mu + cfg.noise_sigma * nb_rng.normal(k);
    res.trace.add_row(t, {ta, tb, sw, cr});
  }
  // Same split a TD-driven load would produce.
  res.obs = ObservationSet({"temperature", "temperature1"});
  for (std::size_t k = 0; k < samples.size(); ++k) {
    res.obs.set(samples[k], "temperature", res.trace.rows[k][0]);
    res.obs.set(samples[k], "temperature1", res.trace.rows[k][1]);
  }
  for (const auto& [name, col] : {std::pair<std::string, int>{"heater", 2}, {"cooler", 3}}) {
    ActionSchedule::Series s;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const double v = res.trace.rows[k][col];
      if (s.empty() || s.back().second != v) s.emplace_back(samples[k], v);
    }
    res.actions.set_series(name, std::move(s));
  }
  return res;
}

// ---- quadcopter ---------------------------------------------------------

/// Planar rotation from body to inertial frame.
inline Eigen::Matrix2d rotation(double psi) {
  Eigen::Matrix2d r;
  r << std::cos(psi), -std::sin(psi), std::sin(psi), std::cos(psi);
  return r;
}
/// d RT / d psi.
inline Eigen::Matrix2d rotation_prime(double psi) {
  Eigen::Matrix2d r;
  r << -std::sin(psi), -std::cos(psi), std::cos(psi), -std::sin(psi);
  return r;
}

inline const std::vector<std::string>& joystick_channels() {
  static const std::vector<std::string> names{"Th", "Ru", "El", "Ai"};
  return names;
}

struct DroneSimConfig {
  // alpha_1 .. alpha_8: El rate/gain, Ai rate/gain, Th rate/gain, Ru rate/gain
  std::array<double, 8> alpha{1.2, 3.0, 1.0, 2.5, 1.5, 2.0, 2.0, 1.0};
  std::uint64_t seed = 1;
  double t0 = 0.0;
  double duration = 30.0;
  double sample_period = 0.1;
  double position_sigma = 0.0;
  double yaw_sigma = 0.0;
  // x, y, z, yaw, vx, vy, vz, yaw rate (inertial frame)
  std::array<double, 8> initial{};
};

/// Piecewise-constant joystick commands in [-amplitude, amplitude], new
/// values every `hold` seconds on the `active` channels, zero elsewhere.
inline ActionSchedule random_joystick(std::uint64_t seed, double t0, double duration, double hold,
                                      const std::vector<std::string>& active, double amplitude = 1.0) {
  ActionSchedule s;
  const CounterRng rng(seed, 77);
  std::uint64_t counter = 0;
  for (const auto& ch : joystick_channels()) {
    ActionSchedule::Series series;
    const bool on = std::find(active.begin(), active.end(), ch) != active.end();
    for (double t = t0; t < t0 + duration - 1e-9; t += hold) {
      const double v = on ? amplitude * (2.0 * rng.uniform(counter++) - 1.0) : 0.0;
      if (series.empty() || series.back().second != v) series.emplace_back(t, v);
    }
    s.set_series(ch, std::move(series));
  }
  return s;
}

inline SimulationResult simulate_drone(const DroneSimConfig& cfg, const ActionSchedule& joystick) {
  if (!(cfg.sample_period > 0.0) || !(cfg.duration > 0.0)) throw Error(ErrorCode::InvalidSimulation, "duration and samplePeriod must be positive");
  for (double a : cfg.alpha)
    if (!(a > 0.0)) throw Error(ErrorCode::InvalidSimulation, "drone gains must be positive");
  std::set<std::string> have;
  for (const auto& [n, s] : joystick.channels()) have.insert(n);
  if (have != std::set<std::string>(joystick_channels().begin(), joystick_channels().end()))
    throw Error(ErrorCode::InvalidSimulation, "joystick channels must be exactly Th, Ru, El, Ai");
  for (const auto& [n, s] : joystick.channels()) {
    if (s.empty()) throw Error(ErrorCode::InvalidSimulation, "joystick channel '" + n + "' is empty", n);
    for (const auto& [t, v] : s)
      if (v < -1.0 || v > 1.0) throw Error(ErrorCode::InvalidSimulation, "joystick values must lie in [-1, 1]", n);
  }

  std::vector<double> samples = sim_detail::sample_grid(cfg.duration, cfg.sample_period);
  for (auto& t : samples) t += cfg.t0;
  std::vector<double> breaks;
  for (const auto& [n, s] : joystick.channels())
    for (const auto& [t, v] : s) breaks.push_back(t);

  const auto& a = cfg.alpha;
  // Inertial velocities are the states; body velocities follow from the yaw.
  auto rhs = [&](const double* x, const std::array<double, 4>& u, double* d) {
    const double psi = x[3], vpsi = x[7];
    const Eigen::Vector2d v(x[4], x[5]);
    const Eigen::Vector2d vb = rotation(psi).transpose() * v;
    const Eigen::Vector2d ab(a[0] * (a[1] * u[2] - vb[0]), a[2] * (a[3] * u[3] - vb[1]));
    const Eigen::Vector2d dv = rotation(psi) * ab + rotation_prime(psi) * vpsi * vb;
    d[0] = x[4];
    d[1] = x[5];
    d[2] = x[6];
    d[3] = x[7];
    d[4] = dv[0];
    d[5] = dv[1];
    d[6] = a[4] * (a[5] * u[0] - x[6]);
    d[7] = a[6] * (a[7] * u[1] - x[7]);
  };
  auto inputs = [&](double t) {
    return std::array<double, 4>{joystick.value("Th", t), joystick.value("Ru", t), joystick.value("El", t), joystick.value("Ai", t)};
  };
  OdeOptions ode;
  ode.rtol = 1e-11;
  ode.atol = 1e-13;
  const auto states =
      sim_detail::run_segments(8, std::vector<double>(cfg.initial.begin(), cfg.initial.end()), samples, breaks, rhs, inputs, ode);

  SimulationResult res;
  res.truth.names = {"positionX", "positionY", "positionZ", "yaw", "velocityX", "velocityY", "velocityZ", "yawrate",
                     "velocitybodyX", "velocitybodyY"};
  res.truth.nx = 10;
  res.truth.times = samples;
  res.truth.values.resize(static_cast<Eigen::Index>(samples.size()), 10);
  res.trace.columns = {"positionX", "positionY", "positionZ", "yaw", "Th", "Ru", "El", "Ai"};
  std::array<CounterRng, 4> noise{CounterRng(cfg.seed, 10), CounterRng(cfg.seed, 11), CounterRng(cfg.seed, 12), CounterRng(cfg.seed, 13)};
  res.obs = ObservationSet({"positionX", "positionY", "positionZ", "yaw"});
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& x = states[k];
    const Eigen::Vector2d vb = rotation(x[3]).transpose() * Eigen::Vector2d(x[4], x[5]);
    res.truth.values.row(static_cast<Eigen::Index>(k)) << x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], vb[0], vb[1];
    std::array<double, 4> o{};
    for (int i = 0; i < 4; ++i) o[i] = x[i] + (i < 3 ? cfg.position_sigma : cfg.yaw_sigma) * noise[i].normal(k);
    const auto u = inputs(samples[k]);
    res.trace.add_row(samples[k], {o[0], o[1], o[2], o[3], u[0], u[1], u[2], u[3]});
    res.obs.set(samples[k], "positionX", o[0]);
    res.obs.set(samples[k], "positionY", o[1]);
    res.obs.set(samples[k], "positionZ", o[2]);
    res.obs.set(samples[k], "yaw", o[3]);
  }
  // Actions keep the exact command breakpoints (they need not sit on samples).
  res.actions = joystick;
  return res;
}

// ---- JSON configs ---------------------------------------------------------

namespace sim_detail {

template <std::size_t N>
void read_array(const nlohmann::json& j, const char* key, std::array<double, N>& out) {
  if (!j.contains(key)) return;
  const auto& a = j[key];
  if (!a.is_array() || a.size() != N) throw Error(ErrorCode::InvalidSimulation, "'" + std::string(key) + "' needs " + std::to_string(N) + " numbers", key);
  for (std::size_t i = 0; i < N; ++i) {
    if (!a[i].is_number()) throw Error(ErrorCode::InvalidSimulation, "'" + std::string(key) + "' entries must be numbers", key);
    out[i] = a[i].get<double>();
  }
}

inline void read_number(const nlohmann::json& j, const char* key, double& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) throw Error(ErrorCode::InvalidSimulation, "'" + std::string(key) + "' must be a number", key);
  out = j[key].get<double>();
}

inline void read_seed(const nlohmann::json& j, std::uint64_t& out) {
  if (!j.contains("seed")) return;
  if (!j["seed"].is_number_unsigned()) throw Error(ErrorCode::InvalidSimulation, "'seed' must be a non-negative integer", "seed");
  out = j["seed"].get<std::uint64_t>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidSimulation, "simulation config must be an object");
  for (const auto& [k, v] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw Error(ErrorCode::InvalidSimulation, "unknown setting '" + k + "'", k);
}

}  // namespace sim_detail

struct RoomScenario {
  RoomSimConfig config;
  ActionSchedule heater, cooler;
};

/// {"seed", "duration", "samplePeriod", "beta": [9], "tOutMean", "tOutSigma",
///  "noiseMu", "noiseSigma", "initial": [tA, tB, hA, hB], "heater": [[t, 0|1]...],
///  "cooler": [[t, 0..9]...]}; absent keys keep the defaults.
inline RoomScenario room_scenario_from_json(const nlohmann::json& j) {
  using namespace sim_detail;
  check_keys(j, {"seed", "duration", "samplePeriod", "beta", "tOutMean", "tOutSigma", "noiseMu", "noiseSigma", "initial", "heater", "cooler"});
  RoomScenario s;
  auto& c = s.config;
  read_seed(j, c.seed);
  read_number(j, "duration", c.duration);
  read_number(j, "samplePeriod", c.sample_period);
  read_array(j, "beta", c.beta);
  read_number(j, "tOutMean", c.t_out_mean);
  read_number(j, "tOutSigma", c.t_out_sigma);
  read_number(j, "noiseMu", c.noise_mu);
  read_number(j, "noiseSigma", c.noise_sigma);
  std::array<double, 4> init{c.t_a0, c.t_b0, c.h_a0, c.h_b0};
  read_array(j, "initial", init);
  std::tie(c.t_a0, c.t_b0, c.h_a0, c.h_b0) = std::tuple(init[0], init[1], init[2], init[3]);
  std::tie(s.heater, s.cooler) = default_room_schedule();
  if (j.contains("heater")) s.heater = ActionSchedule::from_json(nlohmann::json{{"heaterSwitch", j["heater"]}});
  if (j.contains("cooler")) s.cooler = ActionSchedule::from_json(nlohmann::json{{"coolerSetpoint", j["cooler"]}});
  return s;
}

struct DroneScenario {
  DroneSimConfig config;
  ActionSchedule joystick;
};

/// {"seed", "t0", "duration", "samplePeriod", "alpha": [8], "positionSigma",
///  "yawSigma", "initial": [8], "hold", "amplitude", "active": ["Th", ...],
///  "joystick": {"Th": [[t, v]...], ...}}; without "joystick" a random
/// piecewise-constant one is drawn from the seed.
inline DroneScenario drone_scenario_from_json(const nlohmann::json& j) {
  using namespace sim_detail;
  check_keys(j, {"seed", "t0", "duration", "samplePeriod", "alpha", "positionSigma", "yawSigma", "initial", "hold", "amplitude",
                 "active", "joystick"});
  DroneScenario s;
  auto& c = s.config;
  read_seed(j, c.seed);
  read_number(j, "t0", c.t0);
  read_number(j, "duration", c.duration);
  read_number(j, "samplePeriod", c.sample_period);
  read_array(j, "alpha", c.alpha);
  read_number(j, "positionSigma", c.position_sigma);
  read_number(j, "yawSigma", c.yaw_sigma);
  read_array(j, "initial", c.initial);
  if (!(c.position_sigma >= 0.0) || !(c.yaw_sigma >= 0.0)) throw Error(ErrorCode::InvalidSimulation, "noise sigma must be >= 0");
  if (j.contains("joystick")) {
    s.joystick = ActionSchedule::from_json(j["joystick"]);
    return s;
  }
  double hold = 2.0, amplitude = 1.0;
  read_number(j, "hold", hold);
  read_number(j, "amplitude", amplitude);
  if (!(hold > 0.0) || !(amplitude >= 0.0) || amplitude > 1.0)
    throw Error(ErrorCode::InvalidSimulation, "hold must be positive and amplitude in [0, 1]");
  const std::vector<std::string> active = j.value("active", joystick_channels());
  s.joystick = random_joystick(c.seed, c.t0, c.duration, hold, active, amplitude);
  return s;
}

}  // namespace dtwt
