#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

TEST(ThingDescription, ParsesRoomProperties) {
  const auto td = room_td();
  EXPECT_EQ(td.title, "room");
  ASSERT_NE(td.property("temperature"), nullptr);
  EXPECT_TRUE(td.property("temperature")->read_only);
  EXPECT_TRUE(td.property("heater")->writable());
  EXPECT_EQ(td.property("cooler")->value_from, ValueFrom::Model);
  ASSERT_TRUE(td.property("temperature")->initial_bounds);
  EXPECT_EQ(td.property("temperature")->initial_bounds->first, -20);
  EXPECT_EQ(td.property("temperature")->model_inputs.size(), 3u);
  EXPECT_EQ(td.global_param_count, 4);
  EXPECT_DOUBLE_EQ(td.global_guesses.at(2), 15.0);
}

TEST(ThingDescription, PrefixedAndBareKeysAreEquivalent) {
  const auto a = parse_td(td_with(R"("x": {"dtwt:model": "dot(self) = -params[0] * self | params[0] >= 0 | params[0] = 1"})"));
  const auto b = parse_td(td_with(R"("x": {"model": "dot(self) = -params[0] * self | params[0] >= 0 | params[0] = 1"})"));
  EXPECT_EQ(*a.properties[0].model, *b.properties[0].model);
}

TEST(ThingDescription, ParseErrors) {
  EXPECT_EQ(code_of([] { parse_td("{\"title\": "); }), ErrorCode::JsonSyntax);
  EXPECT_EQ(code_of([] { parse_td("[1, 2]"); }), ErrorCode::JsonSyntax);
  EXPECT_EQ(code_of([] { parse_td(R"({"properties": {}})"); }), ErrorCode::MissingField);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:valueFrom": "guess"})")); }), ErrorCode::UnknownValueFrom);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:valueFrom": "model"})")); }), ErrorCode::MissingField);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:model": "dot(self) = params[0] | params[0] >= 3, params[0] <= 1"})")); }),
            ErrorCode::ConflictingBounds);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:initialBounds": [5, 1]})")); }), ErrorCode::ConflictingBounds);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:model": "dot(self) = params[0] | | params[0] = 1, params[0] = 2"})")); }),
            ErrorCode::DuplicateAssignment);
  EXPECT_EQ(code_of([] {
              parse_td(td_with(R"("x": {"dtwt:modelInput": [{"title": "a", "model": "self"}, {"title": "a", "model": "self"}]})"));
            }),
            ErrorCode::DuplicateAssignment);
  EXPECT_EQ(code_of([] { parse_td(td_with(R"("x": {"dtwt:model": "dot(self) = (1"})")); }), ErrorCode::ModelSyntax);
}

TEST(ThingDescription, ModelErrorsCarryJsonPointer) {
  try {
    parse_td(td_with(R"("x": {"dtwt:model": "dot(self) = (1"})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/properties/x/model"), std::string::npos) << e.what();
  }
}

namespace {
std::vector<ErrorCode> error_codes(const std::string& td) {
  std::vector<ErrorCode> out;
  for (const auto& d : validate_td(parse_td(td)))
    if (d.severity == Severity::Error) out.push_back(d.code);
  return out;
}
bool has(const std::vector<ErrorCode>& v, ErrorCode c) { return std::find(v.begin(), v.end(), c) != v.end(); }
}  // namespace

TEST(ThingDescription, AppendixTdsValidate) {
  for (const auto& td : {room_td(), drone_td()}) {
    const auto d = validate_td(td);
    EXPECT_FALSE(has_errors(d));
  }
}

TEST(ThingDescription, UnusedGlobalsAreWarnings) {
  const auto d = validate_td(room_td());
  int unused = 0;
  for (const auto& x : d) unused += x.code == ErrorCode::UnusedParam && x.severity == Severity::Warning;
  EXPECT_EQ(unused, 2);
}

TEST(ThingDescription, ValidationFindings) {
  EXPECT_TRUE(has(error_codes(td_with(R"j("x": {"dtwt:model": "dot(self) = input(nope)"})j")), ErrorCode::UnresolvedInput));
  // parse_td already refuses clashing guesses and bounds
  EXPECT_EQ(code_of([] {
              parse_td(td_with(R"("a": {"dtwt:model": "dot(self) = global[0] | | global[0] = 1"},
                                  "b": {"dtwt:model": "dot(self) = global[0] | | global[0] = 2"})"));
            }),
            ErrorCode::ClashingGlobalGuess);
  EXPECT_EQ(code_of([] {
              parse_td(td_with(R"("a": {"dtwt:model": "dot(self) = global[0] | global[0] >= 1"},
                                  "b": {"dtwt:model": "dot(self) = global[0] | global[0] >= 2"})"));
            }),
            ErrorCode::ClashingGlobalConstraint);
  EXPECT_TRUE(has(error_codes(td_with(R"j("a": {"dtwt:modelInput": [{"title": "i", "propertyName": "ghost", "model": "self"}],
                                              "dtwt:model": "dot(self) = input(i)"})j")),
                  ErrorCode::DanglingReference));
  EXPECT_TRUE(has(error_codes(td_with(R"j("a": {"dtwt:modelInput": [{"title": "i", "propertyName": "b", "model": "self"}], "dtwt:model": "self = input(i)"},
                                         "b": {"dtwt:modelInput": [{"title": "i", "propertyName": "a", "model": "self"}], "dtwt:model": "self = input(i)"})j")),
                  ErrorCode::AlgebraicCycle));
}

TEST(Resolver, RoomListingAndSlots) {
  const auto rs = resolve_models(room_td());
  ASSERT_EQ(rs.differential.size(), 3u);
  ASSERT_EQ(rs.algebraic.size(), 1u);
  EXPECT_EQ(rs.differential[0].name, "temperature");
  EXPECT_EQ(rs.algebraic[0].name, "heater");
  EXPECT_EQ(rs.params.size(), 10u);
  EXPECT_EQ(rs.channels, (std::vector<std::string>{"heater", "cooler"}));
  const std::string listing = rs.listing();
  EXPECT_EQ(listing.substr(0, listing.find('\n')), "y[0]=readProperty(\"heater\",timestamp,data)");
  for (const auto& s : rs.params) EXPECT_LE(s.lower, s.guess) << s.label();
}

TEST(Resolver, SharedGlobalsGetOneSlot) {
  const auto rs = resolve_models(room_td());
  int g3 = 0;
  for (const auto& s : rs.params) g3 += s.label() == "global[3]";
  EXPECT_EQ(g3, 1);
}

TEST(Resolver, DroneStateCounts) {
  const auto rs = resolve_models(drone_td());
  EXPECT_EQ(rs.differential.size(), 10u);
  EXPECT_EQ(rs.algebraic.size(), 2u);
  EXPECT_EQ(rs.params.size(), 8u);
}

TEST(Resolver, RejectsInvalidTd) {
  EXPECT_EQ(code_of([] { resolve_models(parse_td(td_with(R"j("x": {"dtwt:model": "dot(self) = input(nope)"})j"))); }),
            ErrorCode::UnresolvedInput);
}

TEST(System, AssembleChecksOutputs) {
  const auto rs = resolve_models(room_td());
  EXPECT_EQ(code_of([&] { assemble_system(rs, {"nope"}); }), ErrorCode::UnknownOutput);
  const auto sys = assemble_system(rs, {"temperature"});
  EXPECT_EQ(sys.nx(), 3);
  EXPECT_EQ(sys.ny(), 1);
  EXPECT_EQ(sys.np(), 10);
  EXPECT_EQ(sys.x0_lower[0], -20);
  EXPECT_EQ(sys.x0_upper[2], 9);
}

TEST(System, RhsMatchesHandComputation) {
  const auto sys = assemble_system(resolve_models(room_td()), {});
  Eigen::VectorXd p = sys.p_guess, x(3);
  x << 20, 18, 4;
  ActionSchedule s;
  s.set("heater", 0, 1);
  s.set("cooler", 0, 6.6);
  const Eigen::VectorXd d = eval_rhs(sys, 0, x, s, p);
  // dxdt[2] = p8 * (p9 * clamp(round(6.6)) - x2)
  EXPECT_NEAR(d[2], p[8] * (p[9] * 7 - 4), 1e-12);
  EXPECT_NEAR(d[0], p[1] * (p[2] * (p[3] - 20) + (p[0] * 1 - 4) + p[4] * (18 - 20)), 1e-12);
  EXPECT_EQ(code_of([&] { eval_rhs(sys, 0, Eigen::VectorXd(2), s, p); }), ErrorCode::DimensionMismatch);
}
