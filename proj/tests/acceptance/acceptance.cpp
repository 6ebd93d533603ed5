// Acceptance gate: one line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include "promptvm/executor_core.hpp"
#include "promptvm/invariants.hpp"
#include "promptvm/relu_gadgets.hpp"
#include "promptvm/routing.hpp"
#include "promptvm/serialize.hpp"
#include "promptvm/verify.hpp"

using namespace promptvm;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;
  std::function<Outcome()> run;
};

void fold(Outcome& o, bool ok, const std::string& what) {
  if (!ok && o.pass) o.detail = what;
  o.pass = o.pass && ok;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// Random routing instances: the target slot leads every other slot by at
// least delta, values are bounded by B.
Outcome routing_lemma() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Outcome o;
  double worst_ratio = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t L = 2 + static_cast<std::size_t>(u(rng) * 63);
    const double tau = std::exp(std::log(0.05) + u(rng) * std::log(40.0));
    const double delta = tau * std::exp(std::log(0.1) + u(rng) * std::log(500.0));
    const double B = 10.0 * u(rng);
    const std::size_t target = static_cast<std::size_t>(u(rng) * L) % L;
    Vector s(L);
    const double top = 4.0 * (u(rng) - 0.5);
    for (std::size_t j = 0; j < L; ++j) s[j] = top - delta - (u(rng) < 0.3 ? 0.0 : 3.0 * delta * u(rng));
    s[target] = top;
    Matrix values(L, 3);
    for (double& v : values.data()) v = B * (2.0 * u(rng) - 1.0);

    double impurity, copy;
    if (i % 2 == 0) {
      impurity = off_target_mass(s, target, tau);
      copy = copy_deviation(softmax_tau(s, tau), values, target);
    } else {
      // through a basis-keyed prompt and the attention read itself
      const std::size_t D = L + 4;
      Matrix p(L, D);
      for (std::size_t j = 0; j < L; ++j) {
        p(j, j) = 1.0;
        for (std::size_t c = 0; c < 3; ++c) p(j, L + c) = values(j, c);
      }
      std::vector<Triplet> kt, vt;
      for (std::size_t j = 0; j < L; ++j) kt.push_back({j, j, 1.0});
      for (std::size_t c = 0; c < 3; ++c) vt.push_back({L + c, L + c, 1.0});
      const auto wk = SparseMatrix::from_triplets(D, D, kt), wv = SparseMatrix::from_triplets(D, D, vt);
      Vector q(D, 0.0);
      for (std::size_t j = 0; j < L; ++j) q[j] = s[j] * std::sqrt(static_cast<double>(D));
      const Vector read = prompt_read(q, p, wk, wv, tau);
      s = slot_scores(q, p, wk, std::sqrt(static_cast<double>(D)));
      impurity = off_target_mass(s, target, tau);
      copy = 0.0;
      for (std::size_t c = 0; c < 3; ++c) copy = std::max(copy, std::abs(read[L + c] - values(target, c)));
    }
    const MarginCertificate cert = certify(s, target, tau, B);
    const double slack = 1.0 + 1e-12;
    fold(o, impurity <= impurity_upper_bound(cert) * slack, fmt("impurity %.3g above bound at trial %.0f", impurity, i));
    fold(o, copy <= readout_error_bound(cert) * slack + 1e-13 * B,
         fmt("copy error %.3g above bound at trial %.0f", copy, i));
    if (readout_error_bound(cert) > 0) worst_ratio = std::max(worst_ratio, copy / readout_error_bound(cert));
  }
  if (o.pass) o.detail = fmt("10000 instances, worst copy error / bound %.3f", worst_ratio);
  return o;
}

Outcome temperature_corollary() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Outcome o;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t L = 2 + static_cast<std::size_t>(u(rng) * 127);
    const double delta = 0.01 + 10.0 * u(rng);
    const double rho = std::exp(std::log(1e-12) + u(rng) * std::log(0.9e12));
    const double tau = temperature_for_impurity(delta, L, rho);
    fold(o, tau > 0.0 && std::isfinite(tau), "non-positive temperature");
    // worst case: every other slot exactly delta below
    Vector s(L, -delta);
    s[0] = 0.0;
    const double m = off_target_mass(s, 0, tau);
    fold(o, m <= rho * (1.0 + 1e-12), fmt("mass %.3g above rho %.3g", m, rho));
    fold(o, impurity_upper_bound(certify(s, 0, tau, 1.0)) <= rho * (1.0 + 1e-12), "certificate above rho");
    // any colder temperature still meets the target
    const double m2 = off_target_mass(s, 0, tau * (0.1 + 0.9 * u(rng)));
    fold(o, m2 <= rho * (1.0 + 1e-12), "colder temperature above rho");
  }
  if (o.pass) o.detail = "1000 instances";
  return o;
}

Outcome gadgets() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  Matrix U(3, 4);
  for (double& v : U.data()) v = 3.0 * u(rng);
  Vector c{u(rng), u(rng), u(rng)};
  const TwoLayerNet aff = exact_affine(U, c);
  double aff_err = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Vector x(4);
    for (double& v : x) v = 5.0 * u(rng);
    const Vector y = aff(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double e = c[r];
      for (std::size_t k = 0; k < 4; ++k) e += U(r, k) * x[k];
      aff_err = std::max(aff_err, std::abs(y[r] - e) / (1.0 + std::abs(e)));
    }
  }
  fold(o, aff_err <= 1e-12, fmt("affine error %.3g", aff_err));

  double pl_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + static_cast<std::size_t>(trial);
    Vector t(k), v(k);
    double at = -2.0;
    for (std::size_t i = 0; i < k; ++i) {
      at += 0.05 + (u(rng) + 1.0);
      t[i] = at;
      v[i] = 3.0 * u(rng);
    }
    const TwoLayerNet net = pl_to_relu(Pl1D(t, v));
    for (std::size_t i = 0; i < k; ++i) pl_err = std::max(pl_err, std::abs(net(Vector{t[i]})[0] - v[i]));
  }
  fold(o, pl_err <= 1e-10, fmt("pl error at knots %.3g", pl_err));

  double lo_ratio = 1e9, hi_ratio = 0.0;
  for (double B : {1.0, 2.0}) {
    double prev = 0.0;
    for (std::size_t K : {17u, 33u, 65u}) {
      const Gadget g = product_gadget(B, K);
      double worst = 0.0;
      const std::size_t grid = 129;
      for (std::size_t i = 0; i < grid; ++i)
        for (std::size_t j = 0; j < grid; ++j) {
          const double x = -B + 2.0 * B * static_cast<double>(i) / (grid - 1);
          const double y = -B + 2.0 * B * static_cast<double>(j) / (grid - 1);
          worst = std::max(worst, std::abs(g.net(Vector{x, y})[0] - x * y));
        }
      fold(o, worst <= g.error_bound * (1.0 + 1e-12), fmt("product error %.3g above bound %.3g", worst, g.error_bound));
      if (prev > 0.0) {
        lo_ratio = std::min(lo_ratio, prev / worst);
        hi_ratio = std::max(hi_ratio, prev / worst);
      }
      prev = worst;
    }
  }
  fold(o, lo_ratio >= 3.5 && hi_ratio <= 4.5, fmt("refinement ratio in [%.3f, %.3f]", lo_ratio, hi_ratio));
  if (o.pass)
    o.detail = fmt("affine %.2g, pl %.2g, product refinement ratio %.3f..", aff_err, pl_err, lo_ratio) +
               fmt("%.3f", hi_ratio);
  return o;
}

struct ClassSpec {
  std::size_t d, m;
};

const ClassSpec kClasses[] = {{1, 4}, {2, 6}, {3, 8}};

RunConfig class_config(const ClassSpec& s) {
  RunConfig c;
  c.shape = MlpShapeClass{s.d, s.m, 3, 1.0, 1.0};
  return c;
}

Outcome emulation() {
  Outcome o;
  std::string detail;
  for (const ClassSpec& s : kClasses) {
    const RunConfig c = class_config(s);
    const std::string bytes = dump_json(artifact_to_json(build_from_config(c).artifact), -1);
    fold(o, dump_json(artifact_to_json(build_from_config(c).artifact), -1) == bytes, "rebuild is not byte-identical");
    const auto xs = sample_points(s.d, 1.0, 5000, 5000, 11);
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      // every network goes through the same stored executor bytes
      const ExecutorArtifact a = artifact_from_json(Json::parse(bytes));
      const ReluMlp net = random_mlp(c.shape, 1000 * s.d + seed);
      const PromptProgram p = cmd_encode(net, a).prompt;
      const Executor ex(std::make_shared<ExecutorParams>(a.params));
      const EmulationError e = emulation_error(
          ex, p.matrix, [&](std::span<const double> x) { return mlp_forward(net, x); }, xs, c.threads);
      worst = std::max(worst, e.sup);
      fold(o, e.points >= 10000, "fewer than 10000 samples");
      fold(o, e.sup <= c.epsilon_exec(), fmt("d=%.0f m=%.0f sup error %.3g", s.d, s.m, e.sup));
    }
    detail += fmt("(%.0f,%.0f) %.2g  ", s.d, s.m, worst);
  }
  if (o.pass) o.detail = "sup error per class: " + detail + fmt("bound %.3g", class_config(kClasses[0]).epsilon_exec());
  return o;
}

Outcome step_budgets() {
  Outcome o;
  double worst_ratio = 0.0, worst_final = 0.0;
  std::mt19937_64 rng(505);
  std::vector<BuiltExecutor> built;
  for (const ClassSpec& s : kClasses) built.push_back(build_from_config(class_config(s)));
  for (int k = 0; k < 50; ++k) {
    const ClassSpec& s = kClasses[k % 3];
    const BuiltExecutor& b = built[k % 3];
    const Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
    const ReluMlp net = random_mlp(b.geometry.shape, 5000 + k);
    const PromptProgram p = encode_mlp(net, b.geometry.slots, b.codebook);
    for (const Vector& x : sample_points(s.d, 1.0, 0, 4, rng())) {
      const StepErrors e = measure_step_errors(ex, b.geometry, b.program, b.artifact.plan, p, net, x);
      fold(o, e.recursion_holds(), fmt("recursion broken on network %.0f", k));
      fold(o, e.final_holds(), fmt("final error %.3g above %.3g", e.final_error, e.final_bound));
      worst_final = std::max(worst_final, e.final_error / e.final_bound);
      for (std::size_t t = 0; t < e.measured.size(); ++t)
        if (!std::isnan(e.measured[t])) worst_ratio = std::max(worst_ratio, e.measured[t] / e.recursion_bound[t]);
    }
  }
  if (o.pass) o.detail = fmt("50 networks, worst step ratio %.3f, worst final ratio %.3f", worst_ratio, worst_final);
  return o;
}

Outcome invariants() {
  Outcome o;
  std::string detail;
  for (const ClassSpec& s : kClasses) {
    const BuiltExecutor b = build_from_config(class_config(s));
    const Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
    const PromptProgram p = encode_mlp(random_mlp(b.geometry.shape, 77), b.geometry.slots, b.codebook);
    const InvariantReport r =
        check_invariants(ex, b.geometry, b.program, b.artifact.plan, p, sample_points(s.d, 1.0, 50, 50, 3));
    fold(o, r.ok(), fmt("healthy build (%.0f,%.0f) has breaches", s.d, s.m));
  }
  const struct {
    Sabotage mode;
    InvariantId expected;
  } cases[] = {{Sabotage::ShrinkBeta, InvariantId::Margin},
               {Sabotage::InflateTau, InvariantId::RoutingImpurity},
               {Sabotage::CorruptPhase, InvariantId::RegisterIntegrity}};
  for (const auto& cs : cases) {
    RunConfig c = class_config(kClasses[0]);
    c.sabotage = cs.mode;
    const BuiltExecutor b = build_from_config(c);
    const Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
    const PromptProgram p = encode_mlp(random_mlp(b.geometry.shape, 77), b.geometry.slots, b.codebook);
    const InvariantReport r =
        check_invariants(ex, b.geometry, b.program, b.artifact.plan, p, sample_points(1, 1.0, 20, 20, 3));
    const bool hit = !r.breaches.empty() && r.breaches.front().id == cs.expected;
    fold(o, hit, std::string(to_string(cs.mode)) + " did not first breach " + to_string(cs.expected));
    detail += std::string(to_string(cs.mode)) + " -> " +
              (r.breaches.empty() ? "none" : to_string(r.breaches.front().id)) + "  ";
  }
  if (o.pass) o.detail = "healthy builds clean; " + detail;
  return o;
}

Outcome sin_demo() {
  RunConfig c;
  c.epsilon_total = 0.05;
  c.grid_samples = 5000;
  c.random_samples = 5000;
  const DemoResult d = cmd_demo1d(c, DemoTarget::Sin);
  Outcome o;
  for (const auto& ch : d.report.checks)
    fold(o, ch.pass, ch.name + fmt(" measured %.3g bound %.3g", ch.measured, ch.bound));
  if (o.pass)
    for (const auto& ch : d.report.checks)
      if (ch.name == "total-error") o.detail = fmt("total error %.3g <= %.3g", ch.measured, ch.bound);
  return o;
}

Outcome sweeps() {
  Outcome o;
  const RunConfig c;
  const SweepResult tau = cmd_sweep(c, SweepAxis::Tau);
  const double slope = tau_decay_slope(tau);
  fold(o, std::abs(slope + tau.margin) <= 0.1 * tau.margin, fmt("tau slope %.4f vs -%.4f", slope, tau.margin));
  const SweepResult knots = cmd_sweep(c, SweepAxis::Knots);
  const double order = knot_convergence_order(knots);
  fold(o, order >= 1.7 && order <= 2.3, fmt("knot order %.3f", order));
  o.detail = fmt("tau slope %.4f (margin %.3f), knot order %.3f", slope, tau.margin, order);
  return o;
}

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "routing copy lemma", 10.0, routing_lemma},
      {2, "temperature corollary", 5.0, temperature_corollary},
      {3, "relu gadgets", 10.0, gadgets},
      {4, "emulation across classes", 60.0, emulation},
      {5, "step budgets", 60.0, step_budgets},
      {6, "invariants and sabotage", 30.0, invariants},
      {7, "sin demo", 30.0, sin_demo},
      {8, "sweeps", 60.0, sweeps},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt > c.time_limit_s) {
      o.pass = false;
      o.detail += fmt(" (runtime %.1fs over %.0fs)", dt, c.time_limit_s);
    }
    std::printf("[%s] criterion %d: %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), dt);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of 8 criteria passed\n", 8 - failed);
  return failed ? 1 : 0;
}
