// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "promptvm/invariants.hpp"
#include "promptvm/serialize.hpp"

namespace promptvm {

struct SweepGrids {
  std::vector<double> tau_factors{3.0, 2.0, 1.5, 1.0, 0.75, 0.5, 0.375, 0.3};
  std::vector<double> knot_factors{1.0, 2.0, 4.0, 8.0};
  std::vector<std::size_t> slot_counts{2, 4, 8, 16, 32, 64};
  std::vector<double> margins{0.5, 0.75, 1.0, 1.25, 1.5};
  double knot_tau_factor = 0.25;   // routing is negligible at this temperature
  std::size_t routing_trials = 2000;  // per point of the L sweep
};

struct RunConfig {
  MlpShapeClass shape{1, 4, 3, 1.0, 1.0};
  double epsilon_total = 2e-3;
  double approx_fraction = 0.5;  // epsilon_approx = fraction * epsilon_total
  double margin = 1.0;
  std::size_t max_slots = 0;  // 0: hidden_width + 2
  std::size_t grid_samples = 5000;
  std::size_t random_samples = 5000;
  std::size_t invariant_samples = 100;
  std::size_t step_samples = 50;
  std::uint64_t seed = 1;      // sample points
  std::uint64_t mlp_seed = 7;  // random MLPs
  SweepGrids sweep;
  std::string output_dir = ".";
  std::size_t threads = 1;
  Sabotage sabotage = Sabotage::None;
  bool strict = false;
  bool timing = false;
  double margin_slack = 1e-9;
  double impurity_slack = 1e-9;

  double epsilon_approx() const { return approx_fraction * epsilon_total; }
  double epsilon_exec() const { return epsilon_total - epsilon_approx(); }
  void validate() const;
};

Json to_json(const RunConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
RunConfig config_from_json(const Json& j, RunConfig base = {});
std::string config_hash(const RunConfig& c);

struct CheckRecord {
  std::string name;
  double bound = 0.0;
  double measured = 0.0;
  bool pass = false;
  double runtime_s = 0.0;
  std::string detail;
};

struct Report {
  std::string command;
  std::vector<CheckRecord> checks;
  Json config;
  std::string config_hash;
  Json environment;
  Json certificates = Json::array();
  Json extra = Json::object();

  // pass = measured <= bound unless given.
  CheckRecord& add(std::string name, double bound, double measured, std::string detail = {});
  CheckRecord& add_flag(std::string name, bool pass, std::string detail = {});
  bool pass() const;
  Json to_json(bool with_runtime) const;
  std::string summary() const;
};

Report make_report(const std::string& command, const RunConfig& c);

std::vector<Vector> sample_points(std::size_t dim, double radius, std::size_t grid, std::size_t random,
                                  std::uint64_t seed);

// Runs fn(i) for i in [0, n) on up to `threads` threads. Results must go
// into pre-allocated slots indexed by i.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

using Oracle = std::function<double(std::span<const double>)>;

struct EmulationError {
  double sup = 0.0;
  std::size_t argmax = 0;
  std::size_t points = 0;
};

EmulationError emulation_error(const Executor& ex, const Matrix& prompt, const Oracle& oracle,
                               const std::vector<Vector>& xs, std::size_t threads);

struct BuiltExecutor {
  ExecutorArtifact artifact;
  ExecutorGeometry geometry;
  MacroProgram program;
  KeyCodebook codebook;
};

// Plans and builds from the config, applying its sabotage mode.
BuiltExecutor build_from_config(const RunConfig& c);
BuiltExecutor from_artifact(ExecutorArtifact a);

Report cmd_build(const RunConfig& c, const std::string& executor_path, const std::string& report_path);

struct EncodeResult {
  PromptProgram prompt;
  std::string summary;
};
EncodeResult cmd_encode(const ReluMlp& mlp, const ExecutorArtifact& a);

struct EvalRow {
  Vector x;
  double value = 0.0;
  bool domain_error = false;
};
std::vector<EvalRow> cmd_eval(const ExecutorArtifact& a, const PromptProgram& p,
                              const std::vector<Vector>& xs, std::size_t threads);
std::string eval_csv(const std::vector<EvalRow>& rows);

// The oracle defaults to the network decoded from the prompt.
Report cmd_verify(const ExecutorArtifact& a, const PromptProgram& p, const RunConfig& c,
                  std::optional<Oracle> oracle = std::nullopt);

enum class SweepAxis { Tau, Knots, Slots, Margin };
SweepAxis parse_axis(const std::string& s);
const char* to_string(SweepAxis a);

struct SweepRow {
  double value = 0.0;
  double measured_error = 0.0;
  double routing_error = 0.0;
  double arith_error = 0.0;
  double bound = 0.0;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::Tau;
  std::vector<SweepRow> rows;
  double margin = 0.0;  // effective margin of the τ sweep
  std::string csv() const;
};

SweepResult cmd_sweep(const RunConfig& c, SweepAxis axis);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Slope of log(routing error) against 1/tau.
double tau_decay_slope(const SweepResult& r);
// Convergence order p in error ~ K^-p.
double knot_convergence_order(const SweepResult& r);

enum class DemoTarget { Sin, Abs, Runge };
DemoTarget parse_target(const std::string& s);
const char* to_string(DemoTarget t);

struct DemoResult {
  Report report;
  ReluMlp network;
  std::size_t knots = 0;
};

DemoResult cmd_demo1d(const RunConfig& c, DemoTarget target);

}  // namespace promptvm
