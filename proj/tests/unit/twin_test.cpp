#include <cmath>
#include <numbers>

#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

namespace {

struct TankTwin : Tank {
  FitResult fit = fit_parameters(*sys, observe(10, truth), inflow());
  TwinState make(bool cache = true) const {
    TwinState tw = spawn_twin("t1", td, sys, fit, anchor_from_fit(*sys, fit, inflow(), 10.0));
    tw.set_cache_enabled(cache);
    return tw;
  }
};

TankTwin& tank_twin() {
  static TankTwin t;
  return t;
}

}  // namespace

TEST(Twin, AnchorFollowsFitForecast) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  EXPECT_EQ(tw.anchor_time(), 10.0);
  EXPECT_EQ(tw.virtual_time(), 10.0);
  const auto ref = integrate(*T.sys, Eigen::VectorXd::Constant(1, 1.0), T.truth, T.inflow(), {0, 10}, {10});
  EXPECT_NEAR(tw.read_property("level"), ref.values(0, 0), 1e-4);
  EXPECT_EQ(tw.read_property("inflow"), 2.0);
}

TEST(Twin, WritesDriveTheForecast) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  const double l0 = tw.read_property("level");
  tw.write_property("inflow", 0.0);
  const double p1 = T.fit.params[1];
  EXPECT_NEAR(tw.read_property("level", 12.0), l0 * std::exp(-2 * p1), 1e-5 * l0);
  EXPECT_EQ(tw.read_property("inflow", 11.0), 0.0);
}

TEST(Twin, PropertyErrors) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  EXPECT_EQ(code_of([&] { tw.read_property("ghost"); }), ErrorCode::UnknownProperty);
  EXPECT_EQ(code_of([&] { tw.write_property("level", 3); }), ErrorCode::ReadOnlyProperty);
  EXPECT_EQ(code_of([&] { tw.write_property("inflow", 1, 9.0); }), ErrorCode::TimeInPast);
  EXPECT_EQ(code_of([&] { tw.read_property("level", 5.0); }), ErrorCode::TimeBeforeAnchor);
  tw.set_time(11);
  EXPECT_EQ(code_of([&] { tw.write_property("inflow", 1, 10.5); }), ErrorCode::TimeInPast);
  EXPECT_EQ(code_of([&] { tw.write_property("inflow", NAN); }), ErrorCode::InvalidActions);
}

TEST(Twin, CacheIsTransparent) {
  auto& T = tank_twin();
  TwinState a = T.make(true), b = T.make(false);
  for (int k = 0; k < 12; ++k) {
    const double t = 10 + 0.7 * k;
    EXPECT_LE(std::fabs(a.read_property("level", t + 0.3) - b.read_property("level", t + 0.3)), 1e-12);
    if (k % 3 == 0) {
      a.write_property("inflow", 0.5 * k, t + 0.5);
      b.write_property("inflow", 0.5 * k, t + 0.5);
    }
    a.set_time(t);
    b.set_time(t);
  }
}

TEST(Twin, WhatIfDoesNotMutate) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  tw.read_property("level", 13.0);
  const auto before = tw.snapshot().dump();
  ActionSchedule act;
  act.set("inflow", 10.5, 0.0);
  const auto w = tw.what_if(act, 5.0);
  EXPECT_EQ(tw.snapshot().dump(), before);
  EXPECT_EQ(w.trajectory.times.size(), 101u);
  EXPECT_EQ(w.trajectory.times.back(), 15.0);
  EXPECT_LT(w.final_state[0], tw.read_property("level", 15.0));
}

TEST(Twin, WhatIfValidation) {
  auto& T = tank_twin();
  const TwinState tw = T.make();
  ActionSchedule late;
  late.set("inflow", 20, 1);
  EXPECT_EQ(code_of([&] { tw.what_if(late, 5); }), ErrorCode::InvalidActions);
  ActionSchedule ro;
  ro.set("level", 11, 1);
  EXPECT_EQ(code_of([&] { tw.what_if(ro, 5); }), ErrorCode::ReadOnlyProperty);
  EXPECT_EQ(code_of([&] { tw.what_if({}, 0); }), ErrorCode::InvalidActions);
  GeoFence f;
  EXPECT_EQ(code_of([&] { tw.what_if({}, 1, f); }), ErrorCode::UnknownState);
}

TEST(Twin, ResyncRebases) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  tw.write_property("inflow", 0, 11);
  tw.resync(12, {{"level", 7.0}}, true);
  EXPECT_EQ(tw.anchor_time(), 12);
  EXPECT_EQ(tw.read_property("level"), 7.0);
  EXPECT_TRUE(tw.pending_actions().empty());
  EXPECT_EQ(tw.read_property("inflow"), 0.0);
  EXPECT_EQ(code_of([&] { tw.resync(13, {{"inflow", 1}}, false); }), ErrorCode::UnknownState);
}

TEST(Twin, SnapshotRoundTrip) {
  auto& T = tank_twin();
  TwinState tw = T.make();
  tw.write_property("inflow", 0.25, 11.5);
  tw.set_time(11);
  TwinState back = TwinState::from_snapshot(tw.snapshot(), T.td, T.sys);
  EXPECT_EQ(back.snapshot(), tw.snapshot());
  EXPECT_EQ(back.read_property("level", 14), tw.read_property("level", 14));
  auto j = tw.snapshot();
  j["signature"] = "other";
  EXPECT_EQ(code_of([&] { TwinState::from_snapshot(j, T.td, T.sys); }), ErrorCode::SystemMismatch);
  EXPECT_EQ(code_of([&] { TwinState::from_snapshot(nlohmann::json::object(), T.td, T.sys); }), ErrorCode::SchemaMismatch);
}

TEST(Twin, SpawnRejectsForeignFit) {
  auto& T = tank_twin();
  FitResult f = T.fit;
  f.signature = "elsewhere";
  EXPECT_EQ(code_of([&] { spawn_twin("x", T.td, T.sys, f, anchor_from_fit(*T.sys, T.fit, T.inflow(), 10)); }), ErrorCode::SystemMismatch);
  EXPECT_EQ(code_of([&] { anchor_from_fit(*T.sys, T.fit, T.inflow(), -1); }), ErrorCode::TimeBeforeAnchor);
}

namespace {

// x' = ln2 * x in both coordinates: over one second a position doubles.
const char* kPlaneTd = R"({"title": "plane", "properties": {
  "positionX": {"readOnly": true, "dtwt:model": "dot(self) = params[0] * self"},
  "positionY": {"readOnly": true, "dtwt:model": "dot(self) = params[0] * self"}}})";

TwinState plane_twin() {
  auto td = std::make_shared<const ThingDescription>(parse_td(kPlaneTd));
  auto sys = std::make_shared<const CompiledSystem>(assemble_system(resolve_models(*td), {}));
  TwinAnchor a;
  a.state = Eigen::Vector2d(1, 0);
  return TwinState("plane", td, sys, Eigen::VectorXd::Constant(sys->np(), std::numbers::ln2), a);
}

}  // namespace

TEST(Precision, HandCountedCase) {
  // Prediction from x is 2x, so "predicted inside" means |x| <= 1.5.
  // t=0: x=1 -> 1 (TP); t=1: x=1 -> 5 (FP); t=2: x=5 (not predicted);
  // t=3: x=1 -> 2 (TP); t=4: x=2 (not predicted).
  Trajectory truth;
  truth.names = {"positionX", "positionY"};
  truth.nx = 2;
  truth.times = {0, 1, 2, 3, 4, 5};
  truth.values = Eigen::MatrixXd::Zero(6, 2);
  truth.values.col(0) << 1, 1, 5, 1, 2, 2;
  const auto rep = evaluate_precision(truth, plane_twin(), {0, 1, 2, 3, 4}, 1.0, 1.5);
  EXPECT_EQ(rep.true_positives, 2);
  EXPECT_EQ(rep.false_positives, 1);
  ASSERT_TRUE(rep.precision);
  EXPECT_NEAR(*rep.precision, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(rep.sample_count, 5);
}

TEST(Precision, NoPositivesGivesNoPrecision) {
  Trajectory truth;
  truth.names = {"positionX", "positionY"};
  truth.nx = 2;
  truth.times = {0, 1, 2};
  truth.values = Eigen::MatrixXd::Constant(3, 2, 10.0);
  const auto rep = evaluate_precision(truth, plane_twin(), {0, 1}, 1.0, 1.0);
  EXPECT_EQ(rep.true_positives + rep.false_positives, 0);
  EXPECT_FALSE(rep.precision);
  EXPECT_TRUE(to_json(rep)["precision"].is_null());
  EXPECT_EQ(code_of([&] { evaluate_precision(truth, plane_twin(), {0, 1.5}, 1.0, 1.0); }), ErrorCode::InsufficientCoverage);
}

TEST(GeoFenceAlert, RaisedWhenForecastLeaves) {
  const TwinState tw = plane_twin();
  GeoFence f;
  f.radius = 1.5;
  const auto w = tw.what_if({}, 1.0, f);
  ASSERT_TRUE(w.inside_fence);
  EXPECT_FALSE(*w.inside_fence);
  EXPECT_TRUE(w.alert);
  EXPECT_NEAR(w.final_state[0], 2.0, 1e-5);
  f.radius = 3;
  const auto ok = tw.what_if({}, 1.0, f);
  EXPECT_TRUE(*ok.inside_fence);
  EXPECT_FALSE(ok.alert);
}
