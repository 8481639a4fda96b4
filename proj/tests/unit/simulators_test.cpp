#include <cmath>
#include <numbers>

#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

TEST(Rotation, Orthonormal) {
  for (double psi : {-3.0, -0.4, 0.0, 1.1, 2.9}) {
    const Eigen::Matrix2d r = rotation(psi);
    EXPECT_LE((r.transpose() * r - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-15);
    const double h = 1e-6;
    EXPECT_LE(((rotation(psi + h) - rotation(psi - h)) / (2 * h) - rotation_prime(psi)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

namespace {
ActionSchedule constant_sticks(double th, double ru, double el, double ai) {
  ActionSchedule s;
  s.set("Th", 0, th);
  s.set("Ru", 0, ru);
  s.set("El", 0, el);
  s.set("Ai", 0, ai);
  return s;
}
}  // namespace

TEST(DroneSim, ElevatorOnlyMovesAlongX) {
  DroneSimConfig c;
  c.duration = 5;
  const auto sim = simulate_drone(c, constant_sticks(0, 0, 0.5, 0));
  const auto last = sim.truth.values.row(sim.truth.values.rows() - 1);
  EXPECT_GT(last[0], 1.0);
  EXPECT_EQ(last[1], 0.0);
  EXPECT_EQ(last[2], 0.0);
  EXPECT_EQ(last[3], 0.0);
  // steady body velocity gain * stick
  EXPECT_NEAR(last[8], 3.0 * 0.5, 1e-2);
}

TEST(DroneSim, YawTurnsTheVelocity) {
  DroneSimConfig c;
  c.duration = 3;
  c.initial[3] = std::numbers::pi / 2;
  const auto sim = simulate_drone(c, constant_sticks(0, 0, 0.5, 0));
  const auto last = sim.truth.values.row(sim.truth.values.rows() - 1);
  EXPECT_NEAR(last[0], 0.0, 1e-9);
  EXPECT_GT(last[1], 0.5);
}

TEST(DroneSim, SeededReproducibility) {
  DroneSimConfig c;
  c.duration = 4;
  c.position_sigma = 0.1;
  const auto js = random_joystick(9, 0, 4, 1.0, joystick_channels());
  EXPECT_EQ(simulate_drone(c, js).trace, simulate_drone(c, js).trace);
  DroneSimConfig d = c;
  d.seed = 2;
  EXPECT_FALSE(simulate_drone(c, js).trace == simulate_drone(d, js).trace);
  EXPECT_EQ(random_joystick(9, 0, 4, 1.0, joystick_channels()), js);
}

TEST(DroneSim, RejectsBadInput) {
  DroneSimConfig c;
  EXPECT_EQ(code_of([&] { simulate_drone(c, constant_sticks(0, 0, 2, 0)); }), ErrorCode::InvalidSimulation);
  ActionSchedule partial;
  partial.set("Th", 0, 0);
  EXPECT_EQ(code_of([&] { simulate_drone(c, partial); }), ErrorCode::InvalidSimulation);
  c.alpha[0] = -1;
  EXPECT_EQ(code_of([&] { simulate_drone(c, constant_sticks(0, 0, 0, 0)); }), ErrorCode::InvalidSimulation);
}

TEST(DroneSim, TraceMatchesTd) {
  const auto td = drone_td();
  DroneSimConfig c;
  c.duration = 2;
  const auto sim = simulate_drone(c, random_joystick(1, 0, 2, 0.5, joystick_channels()));
  const auto [obs, act] = split_trace(td, sim.trace);
  EXPECT_EQ(obs.size(), 21u);
  for (const auto& ch : joystick_channels()) EXPECT_TRUE(act.has(ch));
  EXPECT_EQ(sim.truth.names.size(), 10u);
}

TEST(RoomSim, DefaultScenario) {
  RoomSimConfig c;
  c.duration = 12 * 3600;
  auto [bh, cr] = default_room_schedule();
  const auto sim = simulate_room(c, bh, cr);
  EXPECT_EQ(sim.trace.columns, (std::vector<std::string>{"temperature", "temperature1", "heater", "cooler"}));
  EXPECT_EQ(sim.trace.times.size(), 145u);
  for (const auto& row : sim.trace.rows) EXPECT_TRUE(row[2] == 0 || row[2] == 1);
  // heater on between 1 h and 6 h warms room A above its start
  EXPECT_GT(sim.truth.values(72, 0), 15.5);
  EXPECT_EQ(simulate_room(c, bh, cr).trace, sim.trace);
}

TEST(ScenarioJson, ParsesAndRejects) {
  const auto s = drone_scenario_from_json(nlohmann::json::parse(R"({"seed": 4, "duration": 3, "hold": 1, "active": ["El"]})"));
  EXPECT_EQ(s.config.seed, 4u);
  EXPECT_EQ(s.config.duration, 3);
  EXPECT_EQ(s.joystick.value("Th", 1.5), 0);
  EXPECT_EQ(code_of([] { drone_scenario_from_json(nlohmann::json::parse(R"({"sede": 1})")); }), ErrorCode::InvalidSimulation);
  EXPECT_EQ(code_of([] { room_scenario_from_json(nlohmann::json::parse(R"({"beta": [1, 2]})")); }), ErrorCode::InvalidSimulation);
  const auto r = room_scenario_from_json(nlohmann::json::parse(R"({"duration": 7200, "heater": [[0, 1]], "cooler": [[0, 3]]})"));
  EXPECT_EQ(r.heater.value(r.heater.channels().begin()->first, 100), 1);
}

TEST(RoomSim, EquilibriumWithoutActions) {
  RoomSimConfig c;
  c.duration = 6 * 3600;
  c.noise_sigma = 0;
  c.t_out_sigma = 0;
  ActionSchedule bh, cr;
  bh.set("sw", 0, 0);
  cr.set("ref", 0, 0);
  const auto sim = simulate_room(c, bh, cr);
  for (Eigen::Index k = 0; k < sim.truth.values.rows(); ++k) {
    EXPECT_NEAR(sim.truth.values(k, 0), 15.0, 1e-9);
    EXPECT_NEAR(sim.truth.values(k, 1), 15.0, 1e-9);
  }
}

TEST(RoomSim, HeaterFirstOrderResponse) {
  // H_A(t) = beta_7 (1 - exp(-beta_6 t)) with beta_6 = 0.001, beta_7 = 1
  RoomSimConfig c;
  c.duration = 2000;
  c.sample_period = 1000;
  ActionSchedule bh, cr;
  bh.set("sw", 0, 1);
  cr.set("ref", 0, 9);
  const auto sim = simulate_room(c, bh, cr);
  EXPECT_NEAR(sim.truth.values(1, 2), 1.0 - std::exp(-1.0), 1e-6);
  // the cooler has no inertia
  EXPECT_NEAR(sim.truth.values(0, 4), 0.9, 1e-12);
}
