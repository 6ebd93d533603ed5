// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/verify.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "promptvm/error.hpp"
#include "promptvm/relu_gadgets.hpp"

namespace promptvm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

template <class T>
std::vector<T> list_of(const Json& j, const char* key) {
  if (!j.is_array()) throw InvalidArgument(std::string("config: ") + key + " must be a list");
  return j.get<std::vector<T>>();
}

}  // namespace

void RunConfig::validate() const {
  shape.validate();
  if (!(epsilon_total > 0.0) || !std::isfinite(epsilon_total))
    throw InvalidArgument("config: epsilon_total must be > 0");
  if (!(approx_fraction >= 0.0 && approx_fraction < 1.0))
    throw InvalidArgument("config: approx_fraction must lie in [0, 1)");
  if (epsilon_approx() + epsilon_exec() > epsilon_total * (1.0 + 1e-15))
    throw InvalidArgument("config: epsilon_approx + epsilon_exec exceeds epsilon_total");
  if (!(margin > 0.0)) throw InvalidArgument("config: margin must be > 0");
  if (grid_samples + random_samples == 0) throw InvalidArgument("config: need at least one sample");
  if (invariant_samples == 0 || step_samples == 0) throw InvalidArgument("config: sample counts must be >= 1");
  if (threads == 0) throw InvalidArgument("config: threads must be >= 1");
  if (!(margin_slack >= 0.0) || !(impurity_slack >= 0.0))
    throw InvalidArgument("config: tolerances must be >= 0");
}

Json to_json(const RunConfig& c) {
  return Json{
      {"shape",
       {{"input_dim", c.shape.input_dim},
        {"hidden_width", c.shape.hidden_width},
        {"depth", c.shape.depth},
        {"param_bound", c.shape.param_bound},
        {"domain_radius", c.shape.domain_radius}}},
      {"epsilon_total", c.epsilon_total},
      {"approx_fraction", c.approx_fraction},
      {"margin", c.margin},
      {"max_slots", c.max_slots},
      {"grid_samples", c.grid_samples},
      {"random_samples", c.random_samples},
      {"invariant_samples", c.invariant_samples},
      {"step_samples", c.step_samples},
      {"seed", c.seed},
      {"mlp_seed", c.mlp_seed},
      {"sweep",
       {{"tau_factors", c.sweep.tau_factors},
        {"knot_factors", c.sweep.knot_factors},
        {"slot_counts", c.sweep.slot_counts},
        {"margins", c.sweep.margins},
        {"knot_tau_factor", c.sweep.knot_tau_factor},
        {"routing_trials", c.sweep.routing_trials}}},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"sabotage", to_string(c.sabotage)},
      {"strict", c.strict},
      {"timing", c.timing},
      {"tolerances", {{"margin_slack", c.margin_slack}, {"impurity_slack", c.impurity_slack}}}};
}

RunConfig config_from_json(const Json& j, RunConfig c) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "shape") {
      for (const auto& [k, s] : v.items()) {
        if (k == "input_dim") c.shape.input_dim = s.get<std::size_t>();
        else if (k == "hidden_width") c.shape.hidden_width = s.get<std::size_t>();
        else if (k == "depth") c.shape.depth = s.get<std::size_t>();
        else if (k == "param_bound") c.shape.param_bound = parse_double(s);
        else if (k == "domain_radius") c.shape.domain_radius = parse_double(s);
        else throw InvalidArgument("config: unknown shape field '" + k + "'");
      }
    } else if (key == "epsilon_total") c.epsilon_total = parse_double(v);
    else if (key == "approx_fraction") c.approx_fraction = parse_double(v);
    else if (key == "margin") c.margin = parse_double(v);
    else if (key == "max_slots") c.max_slots = v.get<std::size_t>();
    else if (key == "grid_samples") c.grid_samples = v.get<std::size_t>();
    else if (key == "random_samples") c.random_samples = v.get<std::size_t>();
    else if (key == "invariant_samples") c.invariant_samples = v.get<std::size_t>();
    else if (key == "step_samples") c.step_samples = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "mlp_seed") c.mlp_seed = v.get<std::uint64_t>();
    else if (key == "sweep") {
      for (const auto& [k, s] : v.items()) {
        if (k == "tau_factors") c.sweep.tau_factors = list_of<double>(s, "tau_factors");
        else if (k == "knot_factors") c.sweep.knot_factors = list_of<double>(s, "knot_factors");
        else if (k == "slot_counts") c.sweep.slot_counts = list_of<std::size_t>(s, "slot_counts");
        else if (k == "margins") c.sweep.margins = list_of<double>(s, "margins");
        else if (k == "knot_tau_factor") c.sweep.knot_tau_factor = parse_double(s);
        else if (k == "routing_trials") c.sweep.routing_trials = s.get<std::size_t>();
        else throw InvalidArgument("config: unknown sweep field '" + k + "'");
      }
    } else if (key == "output_dir") c.output_dir = v.get<std::string>();
    else if (key == "threads") c.threads = v.get<std::size_t>();
    else if (key == "sabotage") c.sabotage = parse_sabotage(v.get<std::string>());
    else if (key == "strict") c.strict = v.get<bool>();
    else if (key == "timing") c.timing = v.get<bool>();
    else if (key == "tolerances") {
      for (const auto& [k, s] : v.items()) {
        if (k == "margin_slack") c.margin_slack = parse_double(s);
        else if (k == "impurity_slack") c.impurity_slack = parse_double(s);
        else throw InvalidArgument("config: unknown tolerance '" + k + "'");
      }
    } else throw InvalidArgument("config: unknown field '" + key + "'");
  }
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CheckRecord& Report::add(std::string name, double bound, double measured, std::string detail) {
  checks.push_back({std::move(name), bound, measured, measured <= bound, 0.0, std::move(detail)});
  return checks.back();
}

CheckRecord& Report::add_flag(std::string name, bool pass, std::string detail) {
  checks.push_back({std::move(name), 1.0, pass ? 1.0 : 0.0, pass, 0.0, std::move(detail)});
  return checks.back();
}

bool Report::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
}

Json Report::to_json(bool with_runtime) const {
  Json cs = Json::array();
  for (const auto& c : checks) {
    Json e{{"name", c.name}, {"bound", number(c.bound)}, {"measured", number(c.measured)}, {"pass", c.pass}};
    if (!c.detail.empty()) e["detail"] = c.detail;
    if (with_runtime) e["runtime_s"] = c.runtime_s;
    cs.push_back(e);
  }
  return Json{{"format", "promptvm.report"}, {"version", 1},         {"command", command},
              {"pass", pass()},              {"checks", cs},         {"config", config},
              {"config_hash", config_hash},  {"environment", environment},
              {"certificates", certificates}, {"extra", extra}};
}

std::string Report::summary() const {
  std::ostringstream out;
  for (const auto& c : checks) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  measured %.6g  bound %.6g", c.measured, c.bound);
    out << (c.pass ? "PASS " : "FAIL ") << c.name << buf;
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << "\n";
  }
  out << command << ": " << (pass() ? "all checks passed" : "checks failed") << "\n";
  return out.str();
}

Report make_report(const std::string& command, const RunConfig& c) {
  Report r;
  r.command = command;
  r.config = to_json(c);
  r.config_hash = config_hash(c);
#if defined(__clang__)
  const std::string compiler = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = std::string("gcc ") + __VERSION__;
#else
  const std::string compiler = "unknown";
#endif
  r.environment = Json{{"compiler", compiler},
                       {"cplusplus", static_cast<long>(__cplusplus)},
                       {"double_digits", std::numeric_limits<double>::digits},
                       {"threads", c.threads}};
  return r;
}

std::vector<Vector> sample_points(std::size_t dim, double radius, std::size_t grid, std::size_t random,
                                  std::uint64_t seed) {
  if (dim == 0) throw InvalidArgument("sample_points: dimension must be positive");
  std::vector<Vector> pts;
  if (grid > 0) {
    std::size_t k = 1;
    auto power = [&](std::size_t b) {
      double p = 1.0;
      for (std::size_t i = 0; i < dim; ++i) p *= static_cast<double>(b);
      return p;
    };
    while (power(k) < static_cast<double>(grid)) ++k;
    Vector axis(k, 0.0);
    for (std::size_t i = 0; i < k && k > 1; ++i)
      axis[i] = -radius + 2.0 * radius * static_cast<double>(i) / static_cast<double>(k - 1);
    std::vector<std::size_t> idx(dim, 0);
    while (true) {
      Vector x(dim);
      for (std::size_t i = 0; i < dim; ++i) x[i] = axis[idx[i]];
      pts.push_back(std::move(x));
      std::size_t i = 0;
      while (i < dim && ++idx[i] == k) idx[i++] = 0;
      if (i == dim) break;
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  for (std::size_t s = 0; s < random; ++s) {
    Vector x(dim);
    for (auto& v : x) v = u(rng);
    pts.push_back(std::move(x));
  }
  return pts;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

EmulationError emulation_error(const Executor& ex, const Matrix& prompt, const Oracle& oracle,
                               const std::vector<Vector>& xs, std::size_t threads) {
  std::vector<double> err(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    err[i] = std::abs(ex.evaluate(prompt, xs[i]) - oracle(xs[i]));
  });
  EmulationError out;
  out.points = xs.size();
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (!(err[i] <= out.sup)) {
      out.sup = std::isnan(err[i]) ? INFINITY : err[i];
      out.argmax = i;
    }
  }
  return out;
}

namespace {

BuiltExecutor assemble(const MlpShapeClass& shape, const BudgetPlan& plan, const BuildOptions& opt) {
  ExecutorGeometry geo = make_geometry(shape, plan.total_slots);
  KeyCodebook cb = KeyCodebook::basis(geo.slots.key_dim);
  ExecutorParams params = build_executor(shape, plan, geo.slots, cb, opt);
  MacroProgram prog = make_macro_program(geo);
  return {{shape, plan, std::move(params)}, std::move(geo), std::move(prog), std::move(cb)};
}

}  // namespace

BuiltExecutor build_from_config(const RunConfig& c) {
  c.validate();
  PlanOptions po{c.margin, c.max_slots, c.epsilon_total, c.epsilon_approx()};
  BudgetPlan plan = plan_budgets(c.epsilon_exec(), c.shape, po);
  return assemble(c.shape, plan, {c.sabotage});
}

BuiltExecutor from_artifact(ExecutorArtifact a) {
  ExecutorGeometry geo = make_geometry(a.shape, a.params.prompt_len());
  if (a.params.model_width() != geo.registers.model_width || a.params.input_dim() != a.shape.input_dim)
    throw IntegrityError("executor parameters do not match their shape class");
  MacroProgram prog = make_macro_program(geo);
  if (a.params.num_blocks() != prog.num_blocks())
    throw IntegrityError("executor block count does not match its shape class");
  KeyCodebook cb = KeyCodebook::basis(geo.slots.key_dim);
  return {std::move(a), std::move(geo), std::move(prog), std::move(cb)};
}

namespace {

double budget_sum(const BudgetPlan& p) {
  double s = 0.0;
  for (std::size_t t = 0; t < p.num_steps(); ++t) s += p.delta_arith[t] + p.lipschitz[t] * p.delta_route[t];
  return s;
}

void add_plan_checks(Report& r, const BudgetPlan& plan) {
  const double cap = plan.epsilon_exec / plan.readout_constant;
  r.add("plan-inequality", cap * (1.0 + 1e-12), budget_sum(plan),
        "sum of delta_arith + L*delta_route over steps vs epsilon_exec / C_out");
  r.add("plan-total-bound", cap * (1.0 + 1e-12), total_bound(plan), "composed one-step bounds");
  double worst = 0.0;
  for (std::size_t t = 0; t < plan.num_steps(); ++t)
    worst = std::max(worst, plan.realized_arith[t] / plan.delta_arith[t]);
  r.add("gadget-arith-budget", 1.0, worst, "max over steps of realized gadget error / delta_arith");
  const double tau_max = plan.margin / std::log(static_cast<double>(plan.num_tokens - 1) / plan.impurity);
  r.add("temperature-corollary", tau_max * (1.0 + 1e-12), plan.temperature, "tau vs delta / log((n-1)/rho)");
}

}  // namespace

Report cmd_build(const RunConfig& c, const std::string& executor_path, const std::string& report_path) {
  const auto t0 = Clock::now();
  Report r = make_report("build", c);
  BuiltExecutor b = build_from_config(c);
  const std::string bytes = dump_json(artifact_to_json(b.artifact), -1);
  write_file(executor_path, bytes);

  add_plan_checks(r, b.artifact.plan);
  r.add_flag("block-count", b.artifact.params.num_blocks() == b.program.num_blocks() &&
                                b.program.num_blocks() == 3 * c.shape.hidden_width + 2,
             std::to_string(b.artifact.params.num_blocks()) + " blocks");
  r.extra["plan"] = to_json(b.artifact.plan);
  r.extra["register_layout"] = to_json(b.geometry.registers);
  r.extra["slot_layout"] = to_json(b.geometry.slots);
  r.extra["num_blocks"] = b.artifact.params.num_blocks();
  r.extra["model_width"] = b.artifact.params.model_width();
  r.extra["executor_bytes"] = bytes.size();
  r.checks.back().runtime_s = seconds_since(t0);
  save_json(report_path, r.to_json(c.timing));
  return r;
}

EncodeResult cmd_encode(const ReluMlp& mlp, const ExecutorArtifact& a) {
  const BuiltExecutor b = from_artifact(a);
  const auto& shape = a.shape;
  if (mlp.depth() != 3) throw UnsupportedShape("encode: executor runs one-hidden-layer networks only");
  if (mlp.input_dim() != shape.input_dim)
    throw UnsupportedShape("encode: network input dimension " + std::to_string(mlp.input_dim()) +
                           " does not match executor dimension " + std::to_string(shape.input_dim));
  if (mlp.max_abs_entry() > shape.param_bound)
    throw PreconditionError("encode: network entry " + std::to_string(mlp.max_abs_entry()) +
                            " exceeds the executor's parameter bound " + std::to_string(shape.param_bound));
  EncodeResult out;
  out.prompt = encode_mlp(mlp, b.geometry.slots, b.codebook, shape.domain_radius);
  out.prompt.source_shape.param_bound = shape.param_bound;
  const auto& L = b.geometry.slots;
  std::ostringstream s;
  s << "slots: " << L.used_slots() << " of " << L.total_slots << " used; units " << mlp.hidden_width()
    << " of " << L.unit_capacity << " (" << L.unit_capacity - mlp.hidden_width()
    << " zero-padded); bias slot " << L.bias_slot << "; null slot " << L.null_slot;
  out.summary = s.str();
  return out;
}

std::vector<EvalRow> cmd_eval(const ExecutorArtifact& a, const PromptProgram& p,
                              const std::vector<Vector>& xs, std::size_t threads) {
  const BuiltExecutor b = from_artifact(a);
  if (!(p.layout == b.geometry.slots)) throw IntegrityError("prompt layout does not match the executor");
  Executor ex(std::make_shared<ExecutorParams>(a.params));
  std::vector<EvalRow> rows(xs.size());
  parallel_for(xs.size(), threads, [&](std::size_t i) {
    rows[i].x = xs[i];
    try {
      rows[i].value = ex.evaluate(p.matrix, xs[i]);
    } catch (const PreconditionError&) {
      rows[i].value = std::nan("");
      rows[i].domain_error = true;
    }
  });
  return rows;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  const std::size_t d = rows.empty() ? 0 : rows[0].x.size();
  for (std::size_t i = 0; i < d; ++i) out << "x" << i << ",";
  out << "F,flag\n";
  char buf[64];
  for (const auto& r : rows) {
    for (double v : r.x) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out << buf;
    }
    if (r.domain_error) {
      out << "nan,domain\n";
    } else {
      std::snprintf(buf, sizeof buf, "%.17g,\n", r.value);
      out << buf;
    }
  }
  return out.str();
}

namespace {

Json certificate_json(const ReadRecord& rr) {
  return Json{{"block", rr.block},
              {"phase", to_string(rr.phase)},
              {"target", rr.cert.target_slot},
              {"margin", number(rr.cert.raw_margin)},
              {"temperature", number(rr.cert.temperature)},
              {"tokens", rr.cert.num_slots},
              {"value_bound", number(rr.cert.value_bound)},
              {"impurity_bound", number(rr.cert.impurity_bound())},
              {"copy_bound", number(rr.cert.copy_error_bound())},
              {"impurity", number(rr.impurity)},
              {"copy_error", number(rr.copy_error)}};
}

Json breach_json(const Breach& b) {
  return Json{{"invariant", to_string(b.id)}, {"block", b.block},       {"half", b.half},
              {"token", b.token},             {"coordinate", b.coordinate}, {"value", number(b.value)},
              {"limit", number(b.limit)},     {"detail", b.detail}};
}

}  // namespace

Report cmd_verify(const ExecutorArtifact& a, const PromptProgram& p, const RunConfig& c,
                  std::optional<Oracle> oracle) {
  Report r = make_report("verify", c);
  const BuiltExecutor b = from_artifact(a);
  const BudgetPlan& plan = a.plan;
  auto t0 = Clock::now();

  const bool layout_ok = p.layout == b.geometry.slots;
  r.add_flag("prompt-layout", layout_ok);
  if (!layout_ok) return r;
  std::optional<ReluMlp> decoded;
  try {
    decoded = decode_prompt(p, b.codebook);
    r.add_flag("prompt-integrity", true);
  } catch (const Error& e) {
    r.add_flag("prompt-integrity", false, e.what());
    return r;
  }
  r.add_flag("shape-class", a.shape.admits(*decoded));
  if (!oracle) {
    const ReluMlp net = *decoded;
    oracle = [net](std::span<const double> x) { return mlp_forward(net, x); };
  }
  add_plan_checks(r, plan);
  r.checks.back().runtime_s = seconds_since(t0);

  Executor ex(std::make_shared<ExecutorParams>(a.params));
  const double rad = a.shape.domain_radius;
  const std::size_t d = a.shape.input_dim;

  // Invariants on instrumented runs.
  t0 = Clock::now();
  const auto inv_xs = sample_points(d, rad, 0, c.invariant_samples, c.seed + 1);
  CheckOptions co;
  co.margin_slack = c.margin_slack;
  co.impurity_slack = c.impurity_slack;
  std::vector<InvariantReport> parts(inv_xs.size());
  parallel_for(inv_xs.size(), c.threads, [&](std::size_t i) {
    parts[i] = check_invariants(ex, b.geometry, b.program, plan, p, {inv_xs[i]}, co);
  });
  InvariantReport inv;
  for (const auto& part : parts) inv.merge(part, co.max_breaches_per_kind);
  const double inv_time = seconds_since(t0);
  auto cnt = [&](InvariantId id) { return std::to_string(inv.count(id)) + " breaches"; };
  r.add("Inv-1 boundedness", plan.box_bound, inv.max_coordinate, cnt(InvariantId::Boundedness)).pass =
      !inv.has(InvariantId::Boundedness);
  r.add_flag("Inv-2 slot-partition", !inv.has(InvariantId::SlotPartition), cnt(InvariantId::SlotPartition));
  {
    auto& rec = r.add("Inv-3 margin", plan.margin, inv.min_margin,
                      "measured is the smallest margin; it must not fall below the bound");
    rec.pass = !inv.has(InvariantId::Margin);
  }
  r.add("routing-impurity", plan.impurity, inv.max_impurity, cnt(InvariantId::RoutingImpurity)).pass =
      !inv.has(InvariantId::RoutingImpurity);
  r.add_flag("Inv-4 register-integrity", !inv.has(InvariantId::RegisterIntegrity),
             cnt(InvariantId::RegisterIntegrity));
  r.add_flag("assembly-norm", !inv.has(InvariantId::AssemblyNorm), cnt(InvariantId::AssemblyNorm));
  r.add_flag("constant-one", !inv.has(InvariantId::ConstantOne), cnt(InvariantId::ConstantOne));
  r.add_flag("exact-phases", !inv.has(InvariantId::ExactPhase), cnt(InvariantId::ExactPhase));
  double lemma_ratio = 0.0;
  for (const auto& rr : inv.reads) {
    const double bound = rr.cert.copy_error_bound();
    lemma_ratio = std::max(lemma_ratio, bound > 0.0 ? rr.copy_error / bound : (rr.copy_error > 0 ? INFINITY : 0.0));
  }
  r.add("routing-copy-lemma", 1.0, lemma_ratio, "max copy error / 2B(n-1)exp(-margin/tau) over executed reads");
  r.checks.back().runtime_s = inv_time;
  for (std::size_t i = 0; i < inv.reads.size() && i < 64; ++i) r.certificates.push_back(certificate_json(inv.reads[i]));
  Json breaches = Json::array();
  for (const auto& br : inv.breaches) breaches.push_back(breach_json(br));
  r.extra["breaches"] = breaches;
  r.extra["reads_certified"] = inv.reads.size();

  // Per-step budget accounting.
  t0 = Clock::now();
  const auto step_xs = sample_points(d, rad, 0, c.step_samples, c.seed + 2);
  std::vector<StepErrors> steps(step_xs.size());
  parallel_for(step_xs.size(), c.threads, [&](std::size_t i) {
    steps[i] = measure_step_errors(ex, b.geometry, b.program, plan, p, *decoded, step_xs[i]);
  });
  double ratio = 0.0, final_err = 0.0;
  bool rec_ok = true;
  for (const auto& s : steps) {
    rec_ok = rec_ok && s.recursion_holds();
    for (std::size_t t = 0; t < s.measured.size(); ++t)
      if (!std::isnan(s.measured[t])) ratio = std::max(ratio, s.measured[t] / s.recursion_bound[t]);
    final_err = std::max(final_err, s.final_error);
  }
  r.add("step-recursion", 1.0, ratio, "max measured step error / one-step bound").pass = rec_ok && ratio <= 1.0;
  r.add("final-state-bound", total_bound(plan), final_err);
  r.checks.back().runtime_s = seconds_since(t0);

  // End-to-end sup error against the oracle.
  t0 = Clock::now();
  const auto xs = sample_points(d, rad, c.grid_samples, c.random_samples, c.seed);
  const EmulationError e = emulation_error(ex, p.matrix, *oracle, xs, c.threads);
  r.add("emulation-sup-error", plan.epsilon_exec, e.sup,
        "measured sup over " + std::to_string(e.points) + " samples");
  r.checks.back().runtime_s = seconds_since(t0);
  return r;
}

SweepAxis parse_axis(const std::string& s) {
  for (auto a : {SweepAxis::Tau, SweepAxis::Knots, SweepAxis::Slots, SweepAxis::Margin})
    if (s == to_string(a)) return a;
  throw InvalidArgument("unknown sweep axis '" + s + "' (tau, knots, L, margin)");
}

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Tau: return "tau";
    case SweepAxis::Knots: return "knots";
    case SweepAxis::Slots: return "L";
    case SweepAxis::Margin: return "margin";
  }
  return "?";
}

std::string SweepResult::csv() const {
  std::ostringstream out;
  out << "axis,value,measured_error,routing_error,arith_error,bound\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", to_string(axis), r.value,
                  r.measured_error, r.routing_error, r.arith_error, r.bound);
    out << buf;
  }
  return out.str();
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_line: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("fit_line: x values are all equal");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double tau_decay_slope(const SweepResult& r) {
  std::vector<double> x, y;
  for (const auto& row : r.rows)
    if (row.routing_error > 0.0) {
      x.push_back(1.0 / row.value);
      y.push_back(std::log(row.routing_error));
    }
  return fit_line(x, y).slope;
}

double knot_convergence_order(const SweepResult& r) {
  std::vector<double> x, y;
  for (const auto& row : r.rows)
    if (row.arith_error > 0.0) {
      x.push_back(std::log(row.value - 1.0));
      y.push_back(std::log(row.arith_error));
    }
  return -fit_line(x, y).slope;
}

namespace {

struct SweepContext {
  RunConfig config;
  BudgetPlan plan;
  ReluMlp mlp;
  std::vector<Vector> xs;      // end-to-end samples
  std::vector<Vector> read_xs;  // instrumented samples
};

SweepContext sweep_context(const RunConfig& c) {
  PlanOptions po{c.margin, c.max_slots, c.epsilon_total, c.epsilon_approx()};
  BudgetPlan plan = plan_budgets(c.epsilon_exec(), c.shape, po);
  ReluMlp mlp = random_mlp(c.shape, c.mlp_seed);
  auto xs = sample_points(c.shape.input_dim, c.shape.domain_radius, c.grid_samples, c.random_samples, c.seed);
  auto rx = sample_points(c.shape.input_dim, c.shape.domain_radius, 0,
                          std::min<std::size_t>(c.invariant_samples, 10), c.seed + 1);
  return {c, std::move(plan), std::move(mlp), std::move(xs), std::move(rx)};
}

struct PointResult {
  double sup = 0.0;
  double read_error = 0.0;  // max copy deviation of the unit reads
};

PointResult run_point(const SweepContext& ctx, const BudgetPlan& plan) {
  BuiltExecutor b = assemble(ctx.config.shape, plan, {});
  Executor ex(std::make_shared<ExecutorParams>(std::move(b.artifact.params)));
  const PromptProgram p = encode_mlp(ctx.mlp, b.geometry.slots, b.codebook, ctx.config.shape.domain_radius);
  const ReluMlp& net = ctx.mlp;
  const auto e = emulation_error(ex, p.matrix, [&](std::span<const double> x) { return mlp_forward(net, x); },
                                 ctx.xs, ctx.config.threads);
  CheckOptions co;
  co.max_breaches_per_kind = 0;
  const auto inv = check_invariants(ex, b.geometry, b.program, plan, p, ctx.read_xs, co);
  double read = 0.0;
  for (const auto& rr : inv.reads)
    if (rr.phase == Phase::Read) read = std::max(read, rr.copy_error);
  return {e.sup, read};
}

double routing_bound(const BudgetPlan& plan, double margin, double tau) {
  return 2.0 * plan.value_bound * static_cast<double>(plan.num_tokens - 1) * std::exp(-margin / tau);
}

std::size_t scaled_knots(std::size_t k, double f) {
  const double target = static_cast<double>(k - 1) * f;
  std::size_t half = static_cast<std::size_t>(std::llround(target / 2.0));
  return 2 * std::max<std::size_t>(half, 1) + 1;
}

double product_error(double bx, double by, std::size_t k) {
  const double eta = 4.0 * std::sqrt(bx * by) / static_cast<double>(k - 1);
  return eta * eta / 8.0;
}

}  // namespace

SweepResult cmd_sweep(const RunConfig& c, SweepAxis axis) {
  c.validate();
  SweepResult out;
  out.axis = axis;
  const SweepContext ctx = sweep_context(c);
  const BudgetPlan& base = ctx.plan;
  out.margin = base.margin;

  switch (axis) {
    case SweepAxis::Tau: {
      if (c.sweep.tau_factors.empty()) throw InvalidArgument("sweep: empty tau grid");
      BudgetPlan floor_plan = base;
      floor_plan.temperature = base.temperature * c.sweep.knot_tau_factor;
      const double floor = run_point(ctx, floor_plan).sup;
      for (double f : c.sweep.tau_factors) {
        BudgetPlan p = base;
        p.temperature = base.temperature * f;
        const PointResult pr = run_point(ctx, p);
        out.rows.push_back({p.temperature, pr.sup, pr.read_error, floor, routing_bound(base, base.margin, p.temperature)});
      }
      break;
    }
    case SweepAxis::Knots: {
      if (c.sweep.knot_factors.empty()) throw InvalidArgument("sweep: empty knot grid");
      for (double f : c.sweep.knot_factors) {
        BudgetPlan p = base;
        p.temperature = base.temperature * c.sweep.knot_tau_factor;
        p.read_knots = scaled_knots(base.read_knots, f);
        p.mulacc_knots = scaled_knots(base.mulacc_knots, f);
        p.read_product_error = product_error(p.read_box_w, p.read_box_x, p.read_knots);
        p.mulacc_product_error = product_error(p.mulacc_box_a, p.mulacc_box_h, p.mulacc_knots);
        const double lam = c.shape.param_bound, dd = static_cast<double>(c.shape.input_dim);
        const double unit = p.mulacc_product_error + (lam + p.delta_arith[0]) * dd * p.read_product_error;
        const PointResult pr = run_point(ctx, p);
        out.rows.push_back({static_cast<double>(p.mulacc_knots), pr.sup, pr.read_error, pr.sup,
                            static_cast<double>(c.shape.hidden_width) * unit});
      }
      break;
    }
    case SweepAxis::Slots: {
      if (c.sweep.slot_counts.empty()) throw InvalidArgument("sweep: empty L grid");
      const double delta = base.margin, tau = base.temperature;
      std::mt19937_64 rng(c.seed);
      std::uniform_real_distribution<double> val(-1.0, 1.0), gap(0.0, 4.0);
      for (std::size_t L : c.sweep.slot_counts) {
        if (L < 2) throw InvalidArgument("sweep: L must be >= 2");
        double worst_copy = 0.0, worst_imp = 0.0;
        Vector s(L);
        Matrix v(L, 3);
        for (std::size_t trial = 0; trial < c.sweep.routing_trials; ++trial) {
          const std::size_t target = trial % L;
          for (std::size_t j = 0; j < L; ++j) s[j] = -gap(rng);
          s[(target + 1) % L] = 0.0;
          s[target] = delta;
          for (auto& e : v.data()) e = val(rng);
          const Vector w = softmax_tau(s, tau);
          worst_copy = std::max(worst_copy, copy_deviation(w, v, target));
          worst_imp = std::max(worst_imp, off_target_mass(s, target, tau));
        }
        const double bound = 2.0 * static_cast<double>(L - 1) * std::exp(-delta / tau);
        out.rows.push_back({static_cast<double>(L), worst_copy, worst_imp, 0.0, bound});
      }
      break;
    }
    case SweepAxis::Margin: {
      if (c.sweep.margins.empty()) throw InvalidArgument("sweep: empty margin grid");
      for (double m : c.sweep.margins) {
        PlanOptions po{m, c.max_slots, c.epsilon_total, c.epsilon_approx()};
        BudgetPlan p = plan_budgets(c.epsilon_exec(), c.shape, po);
        p.temperature = base.temperature;
        const PointResult pr = run_point(ctx, p);
        out.rows.push_back({m, pr.sup, pr.read_error, 0.0, routing_bound(p, m, p.temperature)});
      }
      break;
    }
  }
  return out;
}

DemoTarget parse_target(const std::string& s) {
  for (auto t : {DemoTarget::Sin, DemoTarget::Abs, DemoTarget::Runge})
    if (s == to_string(t)) return t;
  throw InvalidArgument("unknown demo target '" + s + "' (sin, abs, runge)");
}

const char* to_string(DemoTarget t) {
  switch (t) {
    case DemoTarget::Sin: return "sin";
    case DemoTarget::Abs: return "abs";
    case DemoTarget::Runge: return "runge";
  }
  return "?";
}

DemoResult cmd_demo1d(const RunConfig& c, DemoTarget target) {
  c.validate();
  const double rad = c.shape.domain_radius;
  const double eps_total = c.epsilon_total, eps_approx = c.epsilon_approx(), eps_exec = c.epsilon_exec();
  std::function<double(double)> g;
  double curvature = 0.0;  // max |g''| on the domain
  switch (target) {
    case DemoTarget::Sin:
      g = [](double x) { return std::sin(x); };
      curvature = 1.0;
      break;
    case DemoTarget::Abs:
      g = [](double x) { return std::abs(x); };
      break;
    case DemoTarget::Runge:
      g = [](double x) { return 1.0 / (1.0 + 25.0 * x * x); };
      curvature = 50.0;
      break;
  }

  Vector knots;
  if (target == DemoTarget::Abs) {
    knots = {-rad, 0.0, rad};
  } else {
    if (!(eps_approx > 0.0)) throw InfeasiblePlan("approximation budget", "epsilon_approx must be > 0");
    const double eta = std::sqrt(8.0 * eps_approx / curvature);
    const std::size_t segments = static_cast<std::size_t>(std::ceil(2.0 * rad / eta));
    for (std::size_t k = 0; k <= segments; ++k)
      knots.push_back(-rad + 2.0 * rad * static_cast<double>(k) / static_cast<double>(segments));
    knots.back() = rad;
  }
  std::vector<std::pair<double, double>> samples;
  for (double t : knots) samples.emplace_back(t, g(t));
  const Pl1D pl = pl_interpolate(samples);
  ReluMlp net = mlp_from_pl1d(pl);

  MlpShapeClass shape{1, net.hidden_width(), 3, net.max_abs_entry(), rad};
  RunConfig cc = c;
  cc.shape = shape;
  PlanOptions po{c.margin, 0, eps_total, eps_approx};
  BudgetPlan plan = plan_budgets(eps_exec, shape, po);
  BuiltExecutor b = assemble(shape, plan, {c.sabotage});
  Executor ex(std::make_shared<ExecutorParams>(b.artifact.params));
  const PromptProgram p = encode_mlp(net, b.geometry.slots, b.codebook, rad);

  Report r = make_report("demo1d", cc);
  const auto xs = sample_points(1, rad, c.grid_samples + c.random_samples, 0, c.seed);
  const auto t0 = Clock::now();
  std::vector<double> f(xs.size());
  parallel_for(xs.size(), c.threads, [&](std::size_t i) { f[i] = ex.evaluate(p.matrix, xs[i]); });
  double approx = 0.0, exec = 0.0, total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double gx = g(xs[i][0]), nx = mlp_forward(net, xs[i]);
    approx = std::max(approx, std::abs(nx - gx));
    exec = std::max(exec, std::abs(f[i] - nx));
    total = std::max(total, std::abs(f[i] - gx));
  }
  const std::string over = "measured sup over " + std::to_string(xs.size()) + " grid points";
  r.add("approx-error", eps_approx, approx, over);
  r.add("exec-error", eps_exec, exec, over);
  r.add("total-error", eps_total, total, over);
  r.checks.back().runtime_s = seconds_since(t0);
  r.extra["target"] = to_string(target);
  r.extra["knots"] = knots.size();
  r.extra["hidden_width"] = net.hidden_width();
  r.extra["param_bound"] = shape.param_bound;
  r.extra["temperature"] = plan.temperature;
  r.extra["read_knots"] = plan.read_knots;
  r.extra["mulacc_knots"] = plan.mulacc_knots;
  r.extra["num_blocks"] = b.artifact.params.num_blocks();
  return {std::move(r), std::move(net), knots.size()};
}

}  // namespace promptvm
