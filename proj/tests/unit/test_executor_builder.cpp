#include <cmath>
#include <memory>

#include "doctest.h"
#include "promptvm/error.hpp"
#include "promptvm/executor_builder.hpp"
#include "promptvm/verify.hpp"

using namespace promptvm;

namespace {

RunConfig small_config(std::size_t d = 1, std::size_t m = 3) {
  RunConfig c;
  c.shape = MlpShapeClass{d, m, 3, 1.0, 1.0};
  c.epsilon_total = 2e-3;
  return c;
}

double sup_error(const Executor& ex, const PromptProgram& p, const ReluMlp& n, std::size_t d) {
  double worst = 0.0;
  for (const Vector& x : sample_points(d, 1.0, 200, 200, 4))
    worst = std::max(worst, std::abs(ex.evaluate(p.matrix, x) - mlp_forward(n, x)));
  return worst;
}

}  // namespace

TEST_CASE("register and slot geometry") {
  const ExecutorGeometry g = make_geometry(MlpShapeClass{1, 4, 3, 1.0, 1.0});
  CHECK(g.slots.total_slots == 6);
  CHECK(g.tokens() == 9);
  CHECK(g.registers.model_width == 27);
  CHECK_NOTHROW(g.registers.validate());
  const ExecutorGeometry g3 = make_geometry(MlpShapeClass{3, 8, 3, 1.0, 1.0});
  CHECK(g3.registers.model_width == 2 * 10 + 4 * 3 + 11);
  CHECK_THROWS_AS(make_geometry(MlpShapeClass{1, 4, 3, 1.0, 1.0}, 9), BuildError);
  CHECK_THROWS_AS(make_geometry(MlpShapeClass{1, 4, 4, 1.0, 1.0}), UnsupportedShape);
}

TEST_CASE("macro program has 3m+2 blocks") {
  for (std::size_t m : {1, 2, 4, 7}) {
    const ExecutorGeometry g = make_geometry(MlpShapeClass{2, m, 3, 1.0, 1.0});
    const MacroProgram p = make_macro_program(g);
    CHECK(p.num_blocks() == 3 * m + 2);
    CHECK(p.blocks.front().phase == Phase::Seed);
    CHECK(p.blocks.back().phase == Phase::Transfer);
    CHECK(p.blocks.back().output_reads_work);
    CHECK(p.steps.back().kind == MacroStep::Kind::Transfer);
    for (std::size_t b = 1; b + 1 < p.num_blocks(); ++b) CHECK(p.blocks[b].work_target.has_value());
  }
}

TEST_CASE("budget plan is self consistent") {
  const MlpShapeClass shape{2, 6, 3, 1.0, 1.0};
  const BudgetPlan plan = plan_budgets(1e-3, shape, {1.0, 0, 2e-3, 1e-3});
  CHECK_NOTHROW(plan.validate());
  double sum = 0.0;
  for (std::size_t t = 0; t < plan.num_steps(); ++t) {
    CHECK(plan.realized_arith[t] <= plan.delta_arith[t]);
    sum += plan.delta_arith[t] + plan.lipschitz[t] * plan.delta_route[t];
  }
  CHECK(sum <= plan.epsilon_exec / plan.readout_constant * (1.0 + 1e-12));
  CHECK(total_bound(plan) <= plan.epsilon_exec / plan.readout_constant * (1.0 + 1e-12));
  CHECK(plan.read_knots % 2 == 1);
  CHECK(plan.mulacc_knots % 2 == 1);
  CHECK(plan.impurity > 0.0);
  CHECK(plan.impurity < 1.0);
  CHECK(plan.temperature <= temperature_for_impurity(plan.margin, plan.num_tokens, plan.impurity) *
                                 (1.0 + 1e-12));
  CHECK(plan.num_blocks == 3 * 6 + 2);

  // tighter tolerances need more knots and a colder softmax
  const BudgetPlan tight = plan_budgets(1e-5, shape);
  CHECK(tight.read_knots > plan.read_knots);
  CHECK(tight.temperature < plan.temperature);

  CHECK_THROWS_AS(plan_budgets(0.0, shape), InvalidArgument);
  CHECK_THROWS_AS(plan_budgets(1e-3, shape, {0.0}), InvalidArgument);
  CHECK_THROWS_AS(plan_budgets(1e-300, shape), InfeasiblePlan);
}

TEST_CASE("one-step bound and its composition") {
  const BudgetPlan plan = plan_budgets(1e-3, MlpShapeClass{1, 4, 3, 1.0, 1.0});
  for (std::size_t t = 0; t < plan.num_steps(); ++t) {
    const double e = 1e-4 * static_cast<double>(t);
    CHECK(one_step_bound(e, plan, t) ==
          doctest::Approx(plan.state_lipschitz[t] * e + plan.delta_arith[t] +
                          plan.lipschitz[t] * plan.delta_route[t]));
  }
  double err = 0.0;
  for (std::size_t t = 0; t < plan.num_steps(); ++t) err = one_step_bound(err, plan, t);
  CHECK(total_bound(plan) == err);
  CHECK(total_bound(plan) <= plan.epsilon_exec / plan.readout_constant * (1.0 + 1e-12));
  CHECK_THROWS_AS(one_step_bound(0.0, plan, plan.num_steps()), InvalidArgument);
}

TEST_CASE("one executor runs every network of its class") {
  const RunConfig c = small_config(2, 3);
  const BuiltExecutor b = build_from_config(c);
  const Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
  for (std::uint64_t seed : {1u, 2u}) {
    const ReluMlp n = random_mlp(c.shape, seed);
    const PromptProgram p = encode_mlp(n, b.geometry.slots, b.codebook, c.shape.domain_radius);
    CHECK(sup_error(ex, p, n, 2) <= c.epsilon_exec());
  }
  const ReluMlp zero = random_mlp(MlpShapeClass{2, 3, 3, 0.0, 1.0}, 0);
  const PromptProgram pz = encode_mlp(zero, b.geometry.slots, b.codebook);
  CHECK(sup_error(ex, pz, zero, 2) <= c.epsilon_exec());

  // a narrower network fits the same prompt length
  const ReluMlp narrow = random_mlp(MlpShapeClass{2, 1, 3, 1.0, 1.0}, 9);
  const PromptProgram pn = encode_mlp(narrow, b.geometry.slots, b.codebook);
  CHECK(sup_error(ex, pn, narrow, 2) <= c.epsilon_exec());
}

TEST_CASE("build errors") {
  const MlpShapeClass shape{1, 3, 3, 1.0, 1.0};
  const ExecutorGeometry g = make_geometry(shape);
  const BudgetPlan plan = plan_budgets(1e-3, shape);
  const KeyCodebook cb = KeyCodebook::basis(g.slots.key_dim);
  CHECK_NOTHROW(build_executor(shape, plan, g.slots, cb));

  const ExecutorGeometry other = make_geometry(MlpShapeClass{1, 4, 3, 1.0, 1.0});
  CHECK_THROWS_AS(build_executor(shape, plan, other.slots, cb), BuildError);

  const double r = 1.0 / std::sqrt(2.0);
  std::vector<Vector> keys(g.slots.key_dim, Vector(g.slots.key_dim, 0.0));
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i][i] = 1.0;
  keys[0][0] = r;
  keys[0][1] = r;
  CHECK_THROWS_AS(build_executor(shape, plan, g.slots, KeyCodebook(keys)), BuildError);

  const BudgetPlan wrong = plan_budgets(1e-3, MlpShapeClass{1, 4, 3, 1.0, 1.0});
  CHECK_THROWS_AS(build_executor(shape, wrong, g.slots, cb), BuildError);
}

TEST_CASE("sabotage names") {
  for (Sabotage s : {Sabotage::None, Sabotage::ShrinkBeta, Sabotage::InflateTau, Sabotage::CorruptPhase})
    CHECK(parse_sabotage(to_string(s)) == s);
  CHECK_THROWS_AS(parse_sabotage("explode"), InvalidArgument);
}
