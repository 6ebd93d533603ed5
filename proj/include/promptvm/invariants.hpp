// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "promptvm/executor_builder.hpp"

namespace promptvm {

enum class InvariantId {
  Boundedness,        // Inv-1
  SlotPartition,      // Inv-2
  Margin,             // Inv-3
  RoutingImpurity,
  RegisterIntegrity,  // Inv-4
  AssemblyNorm,
  ConstantOne,
  ExactPhase,
};

const char* to_string(InvariantId id);

struct Breach {
  InvariantId id = InvariantId::Boundedness;
  std::size_t block = 0;
  int half = 0;  // 0 attention, 1 feed-forward, -1 whole block or structural
  std::size_t token = 0;
  std::size_t coordinate = 0;
  double value = 0.0;
  double limit = 0.0;
  std::string detail;
};

// One executed read: the work token's attention in a block, certified
// against the plan.
struct ReadRecord {
  std::size_t block = 0;
  std::size_t token = 0;
  Phase phase = Phase::Read;
  MarginCertificate cert;
  double impurity = 0.0;    // measured off-target mass
  double copy_error = 0.0;  // measured read error in max norm
};

struct CheckOptions {
  bool record_reads = true;
  std::size_t max_breaches_per_kind = 8;  // further breaches are only counted
  double margin_slack = 1e-9;    // relative, on the planned margin
  double impurity_slack = 1e-9;  // relative, on the planned rho
};

struct InvariantReport {
  std::size_t samples = 0;
  std::vector<Breach> breaches;
  std::vector<std::size_t> breach_counts;  // indexed by InvariantId
  std::vector<ReadRecord> reads;

  double max_coordinate = 0.0;  // Inv-1 measured
  double min_margin = 0.0;      // Inv-3 measured, over every token and block
  double max_impurity = 0.0;
  double max_copy_error = 0.0;

  bool ok() const;
  bool has(InvariantId id) const;
  std::size_t count(InvariantId id) const;
  void merge(const InvariantReport& other, std::size_t max_breaches_per_kind = 8);
};

// Runs the executor on every x with tracing and checks the invariants block
// by block. Never throws on a violation; breaches go into the report.
InvariantReport check_invariants(const Executor& executor, const ExecutorGeometry& geometry,
                                 const MacroProgram& program, const BudgetPlan& plan,
                                 const PromptProgram& prompt, const std::vector<Vector>& xs,
                                 const CheckOptions& options = {});

struct StepErrors {
  // Per macro step; measured is NaN where the step has no observable state.
  std::vector<double> measured;
  std::vector<double> recursion_bound;  // one_step_bound from the previous observed error
  double final_error = 0.0;
  double final_bound = 0.0;  // total_bound(plan)

  bool recursion_holds() const;
  bool final_holds() const { return final_error <= final_bound; }
};

// Compares the accumulator after each macro step with the exact partial sums
// of the MLP, and the output token's result with N(x).
StepErrors measure_step_errors(const Executor& executor, const ExecutorGeometry& geometry,
                               const MacroProgram& program, const BudgetPlan& plan,
                               const PromptProgram& prompt, const ReluMlp& mlp,
                               std::span<const double> x);

}  // namespace promptvm
