#include <cmath>
#include <memory>

#include "doctest.h"
#include "promptvm/invariants.hpp"
#include "promptvm/verify.hpp"

using namespace promptvm;

namespace {

struct Setup {
  BuiltExecutor built;
  Executor executor;
  ReluMlp net;
  PromptProgram prompt;
};

Setup make_setup(Sabotage s, std::size_t d = 1, std::size_t m = 3) {
  RunConfig c;
  c.shape = MlpShapeClass{d, m, 3, 1.0, 1.0};
  c.sabotage = s;
  BuiltExecutor b = build_from_config(c);
  Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
  ReluMlp n = random_mlp(c.shape, 5);
  PromptProgram p = encode_mlp(n, b.geometry.slots, b.codebook, c.shape.domain_radius);
  return {std::move(b), std::move(ex), std::move(n), std::move(p)};
}

InvariantReport check(const Setup& s, std::size_t samples = 20) {
  const auto xs = sample_points(s.built.geometry.shape.input_dim, 1.0, samples / 2, samples / 2, 3);
  return check_invariants(s.executor, s.built.geometry, s.built.program, s.built.artifact.plan, s.prompt, xs);
}

}  // namespace

TEST_CASE("healthy executor satisfies every invariant") {
  const Setup s = make_setup(Sabotage::None, 2, 3);
  const InvariantReport r = check(s);
  CHECK(r.ok());
  CHECK(r.breaches.empty());
  CHECK(r.samples == sample_points(2, 1.0, 10, 10, 3).size());
  CHECK(r.max_coordinate <= s.built.artifact.plan.box_bound);
  CHECK(r.min_margin >= s.built.artifact.plan.margin * (1.0 - 1e-9));
  CHECK(r.max_impurity <= s.built.artifact.plan.impurity * (1.0 + 1e-9));
  REQUIRE_FALSE(r.reads.empty());
  for (const ReadRecord& rr : r.reads) {
    CHECK(rr.impurity <= rr.cert.impurity_bound() * (1.0 + 1e-9));
    CHECK(rr.copy_error <= rr.cert.copy_error_bound() * (1.0 + 1e-9) + 1e-15);
  }
}

TEST_CASE("step errors follow the recursion") {
  const Setup s = make_setup(Sabotage::None);
  for (double x : {-1.0, -0.4, 0.0, 0.3, 1.0}) {
    const Vector xv{x};
    const StepErrors e = measure_step_errors(s.executor, s.built.geometry, s.built.program,
                                             s.built.artifact.plan, s.prompt, s.net, xv);
    CHECK(e.recursion_holds());
    CHECK(e.final_holds());
    CHECK(e.final_bound == total_bound(s.built.artifact.plan));
    CHECK(e.measured.size() == s.built.program.num_steps());
    CHECK(std::isnan(e.measured[s.built.program.num_steps() - 3]));  // the last unit shares its step
  }
}

TEST_CASE("shrinking beta breaks the margin first") {
  const InvariantReport r = check(make_setup(Sabotage::ShrinkBeta));
  CHECK_FALSE(r.ok());
  REQUIRE_FALSE(r.breaches.empty());
  CHECK(r.breaches.front().id == InvariantId::Margin);
  CHECK(r.has(InvariantId::RoutingImpurity));
}

TEST_CASE("inflating tau breaks routing purity first") {
  const InvariantReport r = check(make_setup(Sabotage::InflateTau));
  REQUIRE_FALSE(r.breaches.empty());
  CHECK(r.breaches.front().id == InvariantId::RoutingImpurity);
}

TEST_CASE("a phase writing outside its registers breaks register integrity only") {
  const InvariantReport r = check(make_setup(Sabotage::CorruptPhase));
  REQUIRE_FALSE(r.breaches.empty());
  CHECK(r.breaches.front().id == InvariantId::RegisterIntegrity);
  CHECK(r.has(InvariantId::RegisterIntegrity));
  CHECK_FALSE(r.has(InvariantId::Margin));
  CHECK_FALSE(r.has(InvariantId::RoutingImpurity));
  CHECK_FALSE(r.has(InvariantId::Boundedness));
  CHECK(r.breaches.front().half == 1);
}

TEST_CASE("report merging keeps counts") {
  const Setup s = make_setup(Sabotage::CorruptPhase);
  InvariantReport a = check(s, 4), b = check(s, 6);
  const std::size_t ca = a.count(InvariantId::RegisterIntegrity), cb = b.count(InvariantId::RegisterIntegrity);
  a.merge(b);
  CHECK(a.samples == 10);
  CHECK(a.count(InvariantId::RegisterIntegrity) == ca + cb);
  CHECK(a.breaches.size() <= 8);
  CHECK(std::string(to_string(InvariantId::Margin)) == "Inv-3");
}
