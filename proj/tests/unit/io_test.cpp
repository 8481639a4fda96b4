#include <cmath>

#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

TEST(TraceCsv, RoundTripWithEmptyCells) {
  Trace tr;
  tr.columns = {"heater", "temperature"};
  tr.add_row(0, {0, 15.123456789012345});
  tr.add_row(300, {1, NAN});
  tr.add_row(600.5, {NAN, 1e-300});
  const Trace back = trace_from_csv(trace_to_csv(tr));
  EXPECT_EQ(back, tr);
  EXPECT_EQ(trace_from_json(trace_to_json(tr)), tr);
}

TEST(TraceCsv, Rejections) {
  EXPECT_EQ(code_of([] { trace_from_csv(""); }), ErrorCode::SchemaMismatch);
  EXPECT_EQ(code_of([] { trace_from_csv("time,a\n0,1\n"); }), ErrorCode::SchemaMismatch);
  EXPECT_EQ(code_of([] { trace_from_csv("t,a,a\n0,1,2\n"); }), ErrorCode::SchemaMismatch);
  EXPECT_EQ(code_of([] { trace_from_csv("t,a\n0,1,2\n"); }), ErrorCode::SchemaMismatch);
  EXPECT_EQ(code_of([] { trace_from_csv("t,a\n0,abc\n"); }), ErrorCode::SchemaMismatch);
  EXPECT_EQ(code_of([] { trace_from_csv("t,a\n1,1\n1,2\n"); }), ErrorCode::NonMonotoneTime);
  EXPECT_EQ(code_of([] { trace_from_json(nlohmann::json::parse(R"([{"a": 1}])")); }), ErrorCode::SchemaMismatch);
}

TEST(SplitTrace, SeparatesObservationsAndActions) {
  const auto td = room_td();
  Trace tr;
  tr.columns = {"temperature", "heater", "cooler"};
  tr.add_row(0, {15, 0, 0});
  tr.add_row(300, {NAN, 1, 0});
  tr.add_row(600, {16, 1, 4});
  const auto [obs, act] = split_trace(td, tr);
  EXPECT_EQ(obs.names(), std::vector<std::string>{"temperature"});
  EXPECT_EQ(obs.count(), 2u);
  EXPECT_EQ(obs.times(), (std::vector<double>{0, 600}));  // the all-empty row is dropped
  EXPECT_EQ(obs.get(1, "temperature"), 16.0);
  EXPECT_EQ(act.series("heater"), (ActionSchedule::Series{{0, 0}, {300, 1}}));
  EXPECT_EQ(act.value("cooler", 700), 4);
  Trace bad = tr;
  bad.columns[0] = "humidity";
  EXPECT_EQ(code_of([&] { split_trace(td, bad); }), ErrorCode::SchemaMismatch);
}

TEST(TrajectoryCsv, RoundTrip) {
  Tank T;
  const auto tr = integrate(*T.sys, Eigen::VectorXd::Constant(1, 1.0), T.truth, T.inflow(), {0, 5}, {0, 1.5, 5});
  const auto back = trajectory_from_csv(trajectory_to_csv(tr));
  EXPECT_EQ(back.names, tr.names);
  EXPECT_EQ(back.times, tr.times);
  EXPECT_EQ(back.values, tr.values);
}

TEST(Observations, WindowAndSelect) {
  ObservationSet o({"a", "b"});
  o.set(0, "a", 1);
  o.set(1, "b", 2);
  o.set(2, "a", 3);
  EXPECT_EQ(o.window(0, 1, true).size(), 1u);
  EXPECT_EQ(o.window(0, 2).size(), 3u);
  EXPECT_EQ(o.select({"b"}).count(), 1u);
  o.set(1, "a", 5);  // fills a cell of an existing row
  EXPECT_EQ(o.get(1, "a"), 5.0);
  EXPECT_EQ(code_of([&] { o.set(1.5, "a", 0); }), ErrorCode::NonMonotoneTime);
}
