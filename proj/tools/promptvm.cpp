// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

// promptvm: build a fixed executor, compile networks into prompts, run and
// verify them.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "promptvm/error.hpp"
#include "promptvm/verify.hpp"

using namespace promptvm;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::optional<std::size_t> input_dim, hidden_width, max_slots, grid_samples, random_samples,
      invariant_samples, step_samples, threads;
  std::optional<double> param_bound, domain_radius, epsilon_total, approx_fraction, margin;
  std::optional<std::uint64_t> seed, mlp_seed;
  std::optional<std::string> output_dir, sabotage;
  bool strict = false, timing = false;

  void attach(CLI::App& app) {
    app.add_option("--input-dim", input_dim, "input dimension d");
    app.add_option("--hidden-width", hidden_width, "hidden width m of the shape class");
    app.add_option("--param-bound", param_bound, "parameter bound Lambda");
    app.add_option("--domain-radius", domain_radius, "inputs lie in [-R, R]^d");
    app.add_option("--epsilon-total", epsilon_total, "end-to-end tolerance");
    app.add_option("--approx-fraction", approx_fraction, "share of epsilon-total for approximation");
    app.add_option("--margin", margin, "effective routing margin");
    app.add_option("--max-slots", max_slots, "prompt length L_max");
    app.add_option("--grid-samples", grid_samples, "dense grid points for sup estimates");
    app.add_option("--random-samples", random_samples, "random points for sup estimates");
    app.add_option("--invariant-samples", invariant_samples, "instrumented runs for invariants");
    app.add_option("--step-samples", step_samples, "instrumented runs for step budgets");
    app.add_option("--seed", seed, "sample seed");
    app.add_option("--mlp-seed", mlp_seed, "random network seed");
    app.add_option("--output-dir", output_dir, "directory for default output paths");
    app.add_option("--threads", threads, "worker threads for batch evaluation");
    app.add_option("--sabotage", sabotage, "none | shrink-beta | inflate-tau | corrupt-phase");
    app.add_flag("--strict", strict, "nonzero exit on any domain violation in eval");
    app.add_flag("--timing", timing, "record runtimes in reports");
  }

  RunConfig apply(RunConfig c) const {
    if (input_dim) c.shape.input_dim = *input_dim;
    if (hidden_width) c.shape.hidden_width = *hidden_width;
    if (param_bound) c.shape.param_bound = *param_bound;
    if (domain_radius) c.shape.domain_radius = *domain_radius;
    if (epsilon_total) c.epsilon_total = *epsilon_total;
    if (approx_fraction) c.approx_fraction = *approx_fraction;
    if (margin) c.margin = *margin;
    if (max_slots) c.max_slots = *max_slots;
    if (grid_samples) c.grid_samples = *grid_samples;
    if (random_samples) c.random_samples = *random_samples;
    if (invariant_samples) c.invariant_samples = *invariant_samples;
    if (step_samples) c.step_samples = *step_samples;
    if (threads) c.threads = *threads;
    if (seed) c.seed = *seed;
    if (mlp_seed) c.mlp_seed = *mlp_seed;
    if (output_dir) c.output_dir = *output_dir;
    if (sabotage) c.sabotage = parse_sabotage(*sabotage);
    if (strict) c.strict = true;
    if (timing) c.timing = true;
    c.validate();
    return c;
  }
};

std::string in_dir(const RunConfig& c, const std::string& given, const std::string& name) {
  if (!given.empty()) return given;
  fs::create_directories(c.output_dir);
  return (fs::path(c.output_dir) / name).string();
}

Vector parse_point(const std::string& s) {
  Vector x;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str()) throw InvalidArgument("malformed coordinate '" + item + "'");
    x.push_back(v);
  }
  return x;
}

std::vector<Vector> read_points(const std::string& path) {
  std::stringstream in(read_file(path));
  std::vector<Vector> xs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (std::isalpha(static_cast<unsigned char>(line[0]))) continue;  // header row
    xs.push_back(parse_point(line));
  }
  return xs;
}

int finish(const Report& r, const std::string& path, bool timing) {
  save_json(path, r.to_json(timing));
  std::cout << r.summary() << "report: " << path << "\n";
  return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"promptvm: fixed-executor prompt programs for one-hidden-layer ReLU networks"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  if (const char* env = std::getenv("PROMPTVM_CONFIG")) config_path = env;
  app.add_option("--config", config_path, "run config JSON (default: $PROMPTVM_CONFIG)");
  Overrides ov;
  ov.attach(app);

  std::string out, report, executor, prompt, mlp_path, x_file, axis = "tau", target = "sin";
  std::vector<std::string> points;
  std::optional<std::uint64_t> net_seed;

  auto* build = app.add_subcommand("build", "plan and build the executor for the configured shape class");
  build->add_option("--out", out, "executor artifact path");
  build->add_option("--report", report, "build report path");

  auto* encode = app.add_subcommand("encode", "compile a network into a prompt for an executor");
  encode->add_option("--mlp", mlp_path, "network JSON")->required();
  encode->add_option("--executor", executor, "executor artifact")->required();
  encode->add_option("--out", out, "prompt output path");

  auto* eval = app.add_subcommand("eval", "evaluate F(p, x)");
  eval->add_option("--executor", executor, "executor artifact")->required();
  eval->add_option("--prompt", prompt, "prompt program")->required();
  eval->add_option("--x", points, "point as comma-separated coordinates; repeatable");
  eval->add_option("--x-file", x_file, "CSV of points, one per row");
  eval->add_option("--out", out, "CSV output (default: stdout)");

  auto* verify = app.add_subcommand("verify", "run the bound and invariant checks");
  verify->add_option("--executor", executor, "executor artifact")->required();
  verify->add_option("--prompt", prompt, "prompt program")->required();
  verify->add_option("--mlp", mlp_path, "oracle network (default: decoded from the prompt)");
  verify->add_option("--report", report, "report path");

  auto* sweep = app.add_subcommand("sweep", "sweep one parameter and write a CSV");
  sweep->add_option("--axis", axis, "tau | knots | L | margin");
  sweep->add_option("--out", out, "CSV path");

  auto* demo = app.add_subcommand("demo1d", "approximate g on [-R, R], build, execute and verify");
  demo->add_option("--target", target, "sin | abs | runge");
  demo->add_option("--report", report, "report path");

  auto* rnd = app.add_subcommand("random-mlp", "write a random network of the configured shape");
  rnd->add_option("--out", out, "network JSON path");
  rnd->add_option("--net-seed", net_seed, "seed (default: mlp-seed)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig base;
    if (!config_path.empty()) base = config_from_json(load_json(config_path));
    const RunConfig cfg = ov.apply(base);

    if (*build) {
      const std::string exe = in_dir(cfg, out, "executor.json");
      const std::string rep = in_dir(cfg, report, "build_report.json");
      try {
        const Report r = cmd_build(cfg, exe, rep);
        std::cout << r.summary() << "executor: " << exe << "\nreport: " << rep << "\n";
        return r.pass() ? 0 : 1;
      } catch (const InfeasiblePlan& e) {
        Report r = make_report("build", cfg);
        r.add_flag("plan-feasible", false, e.what());
        r.extra["infeasible"] = Json{{"constraint", e.constraint()}, {"detail", e.what()}};
        save_json(rep, r.to_json(cfg.timing));
        std::cerr << "infeasible plan: " << e.what() << "\nreport: " << rep << "\n";
        return 1;
      }
    }
    if (*encode) {
      const ExecutorArtifact a = artifact_from_json(load_json(executor));
      const EncodeResult res = cmd_encode(mlp_from_json(load_json(mlp_path)), a);
      const std::string path = in_dir(cfg, out, "prompt.json");
      save_json(path, to_json(res.prompt), -1);
      std::cout << res.summary << "\nprompt: " << path << "\n";
      return 0;
    }
    if (*eval) {
      const ExecutorArtifact a = artifact_from_json(load_json(executor));
      const PromptProgram p = prompt_from_json(load_json(prompt));
      std::vector<Vector> xs;
      for (const auto& s : points) xs.push_back(parse_point(s));
      if (!x_file.empty()) {
        auto more = read_points(x_file);
        xs.insert(xs.end(), more.begin(), more.end());
      }
      if (xs.empty()) throw InvalidArgument("eval: give --x or --x-file");
      const auto rows = cmd_eval(a, p, xs, cfg.threads);
      const std::string csv = eval_csv(rows);
      if (out.empty()) std::cout << csv;
      else write_file(out, csv);
      std::size_t bad = 0;
      for (const auto& r : rows) bad += r.domain_error;
      if (bad) std::cerr << bad << " point(s) outside the domain\n";
      return bad && cfg.strict ? 1 : 0;
    }
    if (*verify) {
      const ExecutorArtifact a = artifact_from_json(load_json(executor));
      const PromptProgram p = prompt_from_json(load_json(prompt));
      std::optional<Oracle> oracle;
      if (!mlp_path.empty()) {
        const ReluMlp net = mlp_from_json(load_json(mlp_path));
        oracle = [net](std::span<const double> x) { return mlp_forward(net, x); };
      }
      return finish(cmd_verify(a, p, cfg, oracle), in_dir(cfg, report, "verify_report.json"), cfg.timing);
    }
    if (*sweep) {
      const SweepAxis ax = parse_axis(axis);
      const SweepResult res = cmd_sweep(cfg, ax);
      const std::string path = in_dir(cfg, out, std::string("sweep_") + to_string(ax) + ".csv");
      write_file(path, res.csv());
      if (ax == SweepAxis::Tau)
        std::printf("log-linear slope %.6g (margin %.6g)\n", tau_decay_slope(res), res.margin);
      if (ax == SweepAxis::Knots) std::printf("convergence order %.6g\n", knot_convergence_order(res));
      std::cout << "csv: " << path << "\n";
      return 0;
    }
    if (*demo) {
      const DemoTarget t = parse_target(target);
      const std::string rep = in_dir(cfg, report, std::string("demo1d_") + target + ".json");
      try {
        return finish(cmd_demo1d(cfg, t).report, rep, cfg.timing);
      } catch (const InfeasiblePlan& e) {
        Report r = make_report("demo1d", cfg);
        r.add_flag("plan-feasible", false, e.what());
        r.extra["infeasible"] = Json{{"constraint", e.constraint()}, {"detail", e.what()}};
        save_json(rep, r.to_json(cfg.timing));
        std::cerr << "infeasible plan: " << e.what() << "\nreport: " << rep << "\n";
        return 1;
      }
    }
    if (*rnd) {
      const ReluMlp net = random_mlp(cfg.shape, net_seed.value_or(cfg.mlp_seed));
      const std::string path = in_dir(cfg, out, "mlp.json");
      save_json(path, to_json(net));
      std::cout << "network: " << path << "\n";
      return 0;
    }
  } catch (const InfeasiblePlan& e) {
    std::cerr << "infeasible plan: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
