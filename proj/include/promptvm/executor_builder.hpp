// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "promptvm/executor_core.hpp"
#include "promptvm/prompt_compiler.hpp"
#include "promptvm/routing.hpp"
#include "promptvm/target_mlp.hpp"

namespace promptvm {

struct Range {
  std::size_t begin = 0;
  std::size_t size = 0;

  std::size_t end() const { return begin + size; }
  std::size_t operator[](std::size_t i) const { return begin + i; }
  bool contains(std::size_t c) const { return c >= begin && c < end(); }
  bool operator==(const Range& other) const = default;
};

/// Coordinate map of the model width D.
///
/// key and value hold the prompt rows' address and payload. Every other
/// range is a register. x_in and one are written by the input embedding,
/// out_flag marks the output token, work_flag becomes 1 on the work token
/// after the first block and gates its query register.
struct RegisterLayout {
  std::size_t model_width = 0;
  Range key, value, landing, x_in, one, out_flag, x_copy, work_flag, query, u, h, acc, out;

  std::vector<std::pair<std::string, Range>> named() const;
  void validate() const;
  bool operator==(const RegisterLayout& other) const = default;
};

RegisterLayout make_register_layout(std::size_t input_dim, std::size_t total_slots);

struct ExecutorGeometry {
  MlpShapeClass shape;
  SlotLayout slots;
  RegisterLayout registers;

  std::size_t tokens() const { return slots.total_slots + 3; }
};

// total_slots = 0 selects m + 2, the only layout the executor accepts.
ExecutorGeometry make_geometry(const MlpShapeClass& shape, std::size_t total_slots = 0);

enum class Phase { Seed, Read, Relu, MulAcc, Transfer };

const char* to_string(Phase p);

struct BlockPlan {
  Phase phase = Phase::Seed;
  std::size_t unit = 0;
  std::optional<std::size_t> work_target;  // slot read by the work token; none in the seed block
  bool output_reads_work = false;
  std::vector<bool> attention_writes;  // declared write-set per coordinate
  std::vector<bool> ffn_writes;
};

struct MacroStep {
  enum class Kind { Unit, Bias, Transfer };
  Kind kind = Kind::Unit;
  std::size_t unit = 0;
  std::size_t first_block = 0;
  std::size_t last_block = 0;
  // The last unit and the bias record finish in the same block; only the
  // bias step has an observable register state.
  bool observable = true;
};

struct MacroProgram {
  std::vector<BlockPlan> blocks;
  std::vector<MacroStep> steps;

  std::size_t num_blocks() const { return blocks.size(); }
  std::size_t num_steps() const { return steps.size(); }
};

MacroProgram make_macro_program(const ExecutorGeometry& geometry);

struct BudgetPlan {
  double epsilon_total = 0.0;
  double epsilon_approx = 0.0;
  double epsilon_exec = 0.0;

  // Per macro step: units 0..m-1, bias, transfer.
  std::vector<double> delta_route;
  std::vector<double> delta_arith;
  std::vector<double> lipschitz;        // L_t
  std::vector<double> state_lipschitz;  // K_t
  std::vector<double> realized_arith;   // analytic arithmetic error of the built gadgets

  double readout_constant = 1.0;  // C_out
  double temperature = 1.0;
  double margin = 1.0;       // effective margin after the 1/sqrt(D) scaling
  double query_scale = 1.0;  // beta
  double impurity = 0.0;     // rho, bound on off-target mass of every read

  std::size_t read_knots = 0;    // product gadgets of the pre-activation phase
  std::size_t mulacc_knots = 0;  // product gadget of the multiply-accumulate phase
  double read_box_w = 0.0, read_box_x = 0.0;
  double mulacc_box_a = 0.0, mulacc_box_h = 0.0;
  double read_product_error = 0.0;
  double mulacc_product_error = 0.0;

  double value_bound = 0.0;   // B of every prompt read
  double preact_bound = 0.0;  // |u| and |h|
  double acc_bound = 0.0;
  double box_bound = 0.0;     // uniform bound on every token coordinate

  std::size_t total_slots = 0;
  std::size_t num_tokens = 0;
  std::size_t model_width = 0;
  std::size_t num_blocks = 0;

  std::size_t num_steps() const { return delta_route.size(); }
  // Throws InvalidArgument naming the violated inequality.
  void validate() const;
};

struct PlanOptions {
  double margin = 1.0;
  std::size_t total_slots = 0;
  double epsilon_total = 0.0;  // 0: same as epsilon_exec
  double epsilon_approx = 0.0;
};

BudgetPlan plan_budgets(double target_eps_exec, const MlpShapeClass& shape,
                        const PlanOptions& options = {});

double one_step_bound(double state_err, const BudgetPlan& plan, std::size_t t);
double total_bound(const BudgetPlan& plan);

enum class Sabotage { None, ShrinkBeta, InflateTau, CorruptPhase };

const char* to_string(Sabotage s);
Sabotage parse_sabotage(const std::string& s);

struct BuildOptions {
  Sabotage sabotage = Sabotage::None;
};

ExecutorParams build_executor(const MlpShapeClass& shape, const BudgetPlan& plan,
                              const SlotLayout& layout, const KeyCodebook& codebook,
                              const BuildOptions& options = {});

}  // namespace promptvm
