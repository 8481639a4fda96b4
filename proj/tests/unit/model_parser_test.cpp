#include "common.hpp"

using namespace dtwt;
using namespace dtwt::testing;

TEST(ModelParser, ParsesBehaviorFunctionConstraintsAndGuesses) {
  const auto m = parse_model("dot(self) = params[0] * (params[1] - self) | params[0] >= 0.0, params[1] <= 5 | params[0] = 2");
  ASSERT_TRUE(m.behavior);
  EXPECT_EQ(*m.behavior, Behavior::Differential);
  EXPECT_EQ(m.local_param_count, 2);
  ASSERT_EQ(m.constraints.size(), 2u);
  EXPECT_EQ(m.constraints[0].kind, BoundKind::Lower);
  EXPECT_EQ(m.constraints[1].kind, BoundKind::Upper);
  EXPECT_DOUBLE_EQ(m.constraints[1].value, 5.0);
  ASSERT_EQ(m.guesses.size(), 1u);
  EXPECT_DOUBLE_EQ(*m.guess_for({ParamTarget::Scope::Local, 0}), 2.0);
}

TEST(ModelParser, AlgebraicBehaviorAndValueRef) {
  const auto m = parse_model("self = value()");
  EXPECT_EQ(*m.behavior, Behavior::Algebraic);
  EXPECT_TRUE(same(m.expr, ex::value()));
}

TEST(ModelParser, MathPrefixAndBuiltins) {
  const auto a = parse_model("self = math.cos(self) + max(0, min(round(self), 9))");
  const auto b = parse_model("self = cos(self) + max(0, min(round(self), 9))");
  EXPECT_TRUE(same(a.expr, b.expr));
}

TEST(ModelParser, InputForms) {
  const auto m = parse_model("dot(self) = input(temp1) + sum(inputType(@heatPower))");
  using namespace ex;
  EXPECT_TRUE(same(m.expr, binary(BinaryOp::Add, input("temp1"), input_type_sum("@heatPower"))) ||
              same(m.expr, binary(BinaryOp::Add, input("temp1"), input_type_sum("heatPower"))));
}

TEST(ModelParser, PrecedenceAndAssociativity) {
  using namespace ex;
  const auto m = parse_model("self = 1 - 2 - 3 * 4 / 5");
  const auto want = binary(BinaryOp::Sub, binary(BinaryOp::Sub, constant(1), constant(2)),
                           binary(BinaryOp::Div, binary(BinaryOp::Mul, constant(3), constant(4)), constant(5)));
  EXPECT_TRUE(same(m.expr, want)) << render(*m.expr);
}

TEST(ModelParser, SyntaxErrors) {
  for (const char* bad : {"dot(self) = ", "self = (1 + 2", "dot(self) = params[0] +", "self = foo(1)", "self = 1 | params[0] >",
                          "x = 1", "self = params[-1]"}) {
    EXPECT_THROW(parse_model(bad), Error) << bad;
  }
}

TEST(ModelParser, NegativeIndexCode) {
  const auto c = code_of([] { parse_model("self = params[-1]"); });
  EXPECT_TRUE(c == ErrorCode::NegativeIndex || c == ErrorCode::ModelSyntax);
}

TEST(ModelParser, UnknownIdentifier) { EXPECT_EQ(code_of([] { parse_model("self = bogus + 1"); }), ErrorCode::UnknownIdentifier); }

TEST(ModelParser, GuessOutsideBoundsRejected) {
  EXPECT_EQ(code_of([] { parse_model("self = params[0] | params[0] >= 1 | params[0] = 0.5"); }), ErrorCode::GuessOutsideBounds);
}

TEST(ModelParser, ConflictingBoundsRejected) {
  EXPECT_EQ(code_of([] { parse_model("self = params[0] | params[0] >= 2, params[0] <= 1"); }), ErrorCode::ConflictingBounds);
}

TEST(ModelParser, RenderRoundTripOnAppendixModels) {
  for (const auto& td : {room_td(), drone_td()})
    for (const auto& p : td.properties) {
      if (!p.model) continue;
      const std::string text = render_model(*p.model);
      EXPECT_EQ(parse_model(text), *p.model) << text;
      for (const auto& in : p.model_inputs) EXPECT_EQ(parse_input_model(render_model(in.model)), in.model);
    }
}
