#include <cmath>

#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

TEST(Learning, ResidualsVanishAtTruth) {
  Tank T;
  const auto obs = T.observe(10, T.truth);
  FitConfig c;
  c.ode.rtol = 1e-10;
  c.ode.atol = 1e-12;
  const Eigen::VectorXd r = compute_residuals(*T.sys, obs, T.inflow(), T.truth, Eigen::VectorXd::Constant(1, 1.0), c);
  EXPECT_EQ(r.size(), static_cast<Eigen::Index>(obs.size()));
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-5);  // data integrated at default tolerances
}

TEST(Learning, RecoversTankParameters) {
  Tank T;
  const auto obs = T.observe(15, T.truth);
  const FitResult f = fit_parameters(*T.sys, obs, T.inflow());
  EXPECT_NEAR(f.params[0], 2.0, 1e-3);
  EXPECT_NEAR(f.params[1], 0.3, 1e-3);
  EXPECT_NEAR(f.initial_state[0], 1.0, 1e-3);
  EXPECT_LT(f.final_cost, f.initial_cost);
  EXPECT_EQ(f.labels.size(), 2u);
  EXPECT_EQ(f.t0, 0);
  EXPECT_EQ(f.t_end, 15);
}

TEST(Learning, Deterministic) {
  Tank T;
  const auto obs = T.observe(10, T.truth);
  const FitResult a = fit_parameters(*T.sys, obs, T.inflow()), b = fit_parameters(*T.sys, obs, T.inflow());
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.cost_history, b.cost_history);
}

TEST(Learning, CostHistoryNonIncreasing) {
  Tank T;
  const FitResult f = fit_parameters(*T.sys, T.observe(10, T.truth), T.inflow());
  for (std::size_t i = 1; i < f.cost_history.size(); ++i) EXPECT_LE(f.cost_history[i], f.cost_history[i - 1]);
}

TEST(Learning, TrialsStayInsideBounds) {
  Tank T;
  FitConfig c;
  c.seed_guess = Eigen::Vector2d(0.0, 0.0);
  long trials = 0, outside = 0;
  c.on_trial = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& x0) {
    ++trials;
    outside += (p.array() < 0).count() + (x0.array() < 0).count() + (x0.array() > 100).count();
  };
  fit_parameters(*T.sys, T.observe(10, T.truth), T.inflow(), c);
  EXPECT_GT(trials, 0);
  EXPECT_EQ(outside, 0);
}

TEST(Learning, FixedInitialState) {
  Tank T;
  FitConfig c;
  c.fix_initial_state = true;
  c.x0_guess = Eigen::VectorXd::Constant(1, 1.0);
  const FitResult f = fit_parameters(*T.sys, T.observe(10, T.truth), T.inflow(), c);
  EXPECT_EQ(f.initial_state[0], 1.0);
  EXPECT_NEAR(f.params[1], 0.3, 1e-3);
}

TEST(Learning, EvaluateOnlyKeepsGuess) {
  Tank T;
  FitConfig c;
  c.evaluate_only = true;
  const FitResult f = fit_parameters(*T.sys, T.observe(10, T.truth), T.inflow(), c);
  EXPECT_EQ(f.params, T.sys->p_guess);
  EXPECT_EQ(f.final_cost, f.initial_cost);
}

TEST(Learning, InvalidConfig) {
  Tank T;
  FitConfig c;
  c.max_iterations = 0;
  EXPECT_EQ(code_of([&] { fit_parameters(*T.sys, T.observe(5, T.truth), T.inflow(), c); }), ErrorCode::InvalidConfig);
  FitConfig w;
  w.weights["level"] = -1;
  EXPECT_EQ(code_of([&] { fit_parameters(*T.sys, T.observe(5, T.truth), T.inflow(), w); }), ErrorCode::InvalidConfig);
}

TEST(Learning, JacobianMatchesCentralDifferences) {
  Tank T;
  const auto obs = T.observe(10, T.truth);
  FitConfig c;
  c.ode.rtol = 1e-10;
  c.ode.atol = 1e-12;
  const Eigen::Vector2d p(1.5, 0.4);
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::MatrixXd J = finite_difference_jacobian(*T.sys, obs, T.inflow(), p, x0, c);
  ASSERT_EQ(J.cols(), 3);
  for (int j = 0; j < 2; ++j) {
    Eigen::Vector2d a = p, b = p;
    a[j] += 1e-5, b[j] -= 1e-5;
    const Eigen::VectorXd cd = (compute_residuals(*T.sys, obs, T.inflow(), a, x0, c) - compute_residuals(*T.sys, obs, T.inflow(), b, x0, c)) / 2e-5;
    EXPECT_LT((J.col(j) - cd).cwiseAbs().maxCoeff(), 1e-4 * cd.cwiseAbs().maxCoeff());
  }
}

TEST(Learning, ContinuousFitOnRepeatedDataNeverGetsWorse) {
  Tank T;
  const auto obs = T.observe(12, T.truth);
  FitConfig c;
  c.max_iterations = 2;
  const auto fits = continuous_fit(*T.sys, std::vector<std::pair<ObservationSet, ActionSchedule>>(4, {obs, T.inflow()}), c);
  ASSERT_EQ(fits.size(), 4u);
  for (std::size_t i = 1; i < fits.size(); ++i) EXPECT_LE(fits[i].final_cost, fits[i - 1].final_cost * (1 + 1e-12) + 1e-20);  // floor: costs reach round-off
  EXPECT_EQ(code_of([&] { continuous_fit(*T.sys, {}, c); }), ErrorCode::InvalidConfig);
}

TEST(Learning, HeldoutMse) {
  Tank T;
  const auto obs = T.observe(15, T.truth);
  const FitResult f = fit_parameters(*T.sys, obs.window(-1, 8), T.inflow());
  const double mse = heldout_mse(*T.sys, f, T.inflow(), obs.window(8, 15, true), {"level"});
  EXPECT_LT(mse, 1e-6);
  EXPECT_EQ(code_of([&] { heldout_mse(*T.sys, f, T.inflow(), ObservationSet({"level"}), {"level"}); }), ErrorCode::InsufficientCoverage);
}

TEST(Learning, FitJsonRoundTrip) {
  Tank T;
  const FitResult f = fit_parameters(*T.sys, T.observe(10, T.truth), T.inflow());
  const FitResult g = fit_from_json(to_json(f));
  EXPECT_EQ(g.params, f.params);
  EXPECT_EQ(g.initial_state, f.initial_state);
  EXPECT_EQ(g.signature, f.signature);
  EXPECT_EQ(g.labels, f.labels);
}

TEST(Learning, DroneRecoveryNoiseless) {
  const auto td = drone_td();
  const auto sys = assemble_system(resolve_models(td), {"positionX", "positionY", "positionZ"});
  DroneSimConfig cfg;
  cfg.duration = 20;
  const auto sim = simulate_drone(cfg, random_joystick(2, 0, cfg.duration, 2.0, joystick_channels()));
  const auto [obs, act] = split_trace(td, sim.trace);
  const Eigen::VectorXd truth = (Eigen::VectorXd(8) << 1.5, 2.0, 2.0, 1.0, 1.2, 3.0, 1.0, 2.5).finished();
  FitConfig c;
  c.seed_guess = truth * 1.25;
  const FitResult f = fit_parameters(sys, obs, act, c);
  EXPECT_LT(((f.params - truth).array() / truth.array()).abs().maxCoeff(), 1e-3);
}
