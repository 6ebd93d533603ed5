// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "promptvm/error.hpp"

namespace promptvm {

const char* to_string(InvariantId id) {
  switch (id) {
    case InvariantId::Boundedness: return "Inv-1";
    case InvariantId::SlotPartition: return "Inv-2";
    case InvariantId::Margin: return "Inv-3";
    case InvariantId::RoutingImpurity: return "routing-impurity";
    case InvariantId::RegisterIntegrity: return "Inv-4";
    case InvariantId::AssemblyNorm: return "assembly-norm";
    case InvariantId::ConstantOne: return "constant-one";
    case InvariantId::ExactPhase: return "exact-phase";
  }
  return "?";
}

namespace {

constexpr std::size_t kNumIds = 8;

}  // namespace

bool InvariantReport::ok() const {
  return std::all_of(breach_counts.begin(), breach_counts.end(), [](std::size_t c) { return c == 0; });
}

std::size_t InvariantReport::count(InvariantId id) const {
  const auto i = static_cast<std::size_t>(id);
  return i < breach_counts.size() ? breach_counts[i] : 0;
}

bool InvariantReport::has(InvariantId id) const { return count(id) > 0; }

void InvariantReport::merge(const InvariantReport& o, std::size_t cap) {
  if (breach_counts.size() < kNumIds) breach_counts.resize(kNumIds, 0);
  const bool first = samples == 0;
  samples += o.samples;
  for (const auto& b : o.breaches) {
    std::size_t kept = 0;
    for (const auto& e : breaches) kept += e.id == b.id;
    if (kept < cap) breaches.push_back(b);
  }
  for (std::size_t i = 0; i < o.breach_counts.size() && i < kNumIds; ++i)
    breach_counts[i] += o.breach_counts[i];
  reads.insert(reads.end(), o.reads.begin(), o.reads.end());
  max_coordinate = std::max(max_coordinate, o.max_coordinate);
  min_margin = first ? o.min_margin : std::min(min_margin, o.min_margin);
  max_impurity = std::max(max_impurity, o.max_impurity);
  max_copy_error = std::max(max_copy_error, o.max_copy_error);
}

namespace {

class Recorder {
 public:
  Recorder(InvariantReport& r, std::size_t cap) : r_(r), cap_(cap), kept_(kNumIds, 0) {
    r_.breach_counts.assign(kNumIds, 0);
  }

  void add(Breach b) {
    const auto i = static_cast<std::size_t>(b.id);
    ++r_.breach_counts[i];
    if (kept_[i]++ < cap_) r_.breaches.push_back(std::move(b));
  }

 private:
  InvariantReport& r_;
  std::size_t cap_;
  std::vector<std::size_t> kept_;
};

Matrix project(const Matrix& z, const SparseMatrix& w) {
  Matrix out(z.rows(), w.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) accumulate_row_product(z.row(i), w, out.row(i));
  return out;
}

std::size_t target_of(const ExecutorGeometry& g, const BlockPlan& bp, std::size_t token,
                      bool& checked) {
  const std::size_t L = g.slots.total_slots;
  checked = true;
  if (token == L + 1) {
    if (!bp.work_target) checked = false;
    return bp.work_target.value_or(0);
  }
  if (token == L + 2 && bp.output_reads_work) return L + 1;
  return g.slots.null_slot;
}

void check_structure(const ExecutorParams& params, const ExecutorGeometry& g, const MacroProgram& prog,
                     Recorder& rec) {
  const auto& R = g.registers;
  for (std::size_t t = 0; t < prog.num_blocks(); ++t) {
    const Phase ph = prog.blocks[t].phase;
    if (ph != Phase::Read && ph != Phase::Relu && ph != Phase::MulAcc) continue;
    // Row sums of |W_V| restricted to the landing block.
    const SparseMatrix& wv = params.blocks()[t].wv;
    Vector row_sum(R.landing.size, 0.0);
    for (std::size_t r = 0; r < wv.rows(); ++r) {
      auto cs = wv.row_cols(r);
      auto vs = wv.row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k)
        if (R.landing.contains(cs[k])) row_sum[cs[k] - R.landing.begin] += std::abs(vs[k]);
    }
    const double norm = *std::max_element(row_sum.begin(), row_sum.end());
    if (norm != 1.0)
      rec.add({InvariantId::AssemblyNorm, t, 0, 0, R.landing.begin, norm, 1.0,
               "landing assembly map does not have unit infinity norm"});
  }
}

}  // namespace

InvariantReport check_invariants(const Executor& executor, const ExecutorGeometry& g,
                                 const MacroProgram& prog, const BudgetPlan& plan,
                                 const PromptProgram& prompt, const std::vector<Vector>& xs,
                                 const CheckOptions& options) {
  const ExecutorParams& params = executor.params();
  if (prog.num_blocks() != params.num_blocks())
    throw InvalidArgument("check_invariants: program and executor disagree on block count");
  if (prompt.matrix.cols() != params.model_width() || prompt.matrix.rows() != params.prompt_len())
    throw InvalidArgument("check_invariants: prompt does not fit the executor");

  InvariantReport rep;
  Recorder rec(rep, options.max_breaches_per_kind);
  rep.min_margin = std::numeric_limits<double>::infinity();
  check_structure(params, g, prog, rec);

  const auto& R = g.registers;
  const std::size_t D = R.model_width;
  const std::size_t L = g.slots.total_slots;
  const std::size_t n = g.tokens();
  const std::size_t work = L + 1, input = L;
  const double root = std::sqrt(static_cast<double>(D));
  const double tau = params.temperature();
  const double delta_min = plan.margin * (1.0 - options.margin_slack);
  const double rho_max = plan.impurity * (1.0 + options.impurity_slack);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  ExecutionTrace tr;
  for (const auto& x : xs) {
    ++rep.samples;
    executor.run(prompt.matrix, x, &tr);

    for (std::size_t t = 0; t < prog.num_blocks(); ++t) {
      const BlockPlan& bp = prog.blocks[t];
      const BlockWeights& w = params.blocks()[t];
      const Matrix& before = t == 0 ? tr.initial.state() : tr.after_ffn[t - 1];
      const Matrix& mid = tr.after_attention[t];
      const Matrix& after = tr.after_ffn[t];

      // Inv-3 and routing impurity on every token.
      const Matrix q = project(before, w.wq);
      const Matrix k = project(before, w.wk);
      const Matrix v = project(before, w.wv);
      Vector s(n);
      for (std::size_t i = 0; i < n; ++i) {
        bool checked = false;
        const std::size_t target = target_of(g, bp, i, checked);
        if (!checked) continue;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < D; ++c) dot += q(i, c) * k(j, c);
          s[j] = dot / root;
        }
        double best_other = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
          if (j != target) best_other = std::max(best_other, s[j]);
        const double margin = s[target] - best_other;
        rep.min_margin = std::min(rep.min_margin, margin);
        if (!(margin >= delta_min))
          rec.add({InvariantId::Margin, t, 0, i, R.query.begin + target, margin, plan.margin,
                   "read margin below plan"});
        const double imp = off_target_mass(s, target, tau);
        rep.max_impurity = std::max(rep.max_impurity, imp);
        if (!(imp <= rho_max))
          rec.add({InvariantId::RoutingImpurity, t, 0, i, target, imp, plan.impurity,
                   "off-target attention mass above plan"});
        if (i == work) {
          const double err = copy_deviation(tr.attention[t].row(i), v, target);
          rep.max_copy_error = std::max(rep.max_copy_error, err);
          if (options.record_reads) {
            const double bound = bp.phase == Phase::Transfer ? plan.acc_bound : plan.value_bound;
            MarginCertificate cert{target, margin, n, tau, bound};
            rep.reads.push_back({t, i, bp.phase, cert, imp, err});
          }
        }
      }

      // Inv-1, Inv-2, Inv-4 and the constant coordinate, per half step.
      const Matrix* halves[2][2] = {{&before, &mid}, {&mid, &after}};
      for (int h = 0; h < 2; ++h) {
        const Matrix& a = *halves[h][0];
        const Matrix& b = *halves[h][1];
        const std::vector<bool>& declared = h == 0 ? bp.attention_writes : bp.ffn_writes;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < D; ++c) {
            const double val = b(i, c);
            const double mag = std::abs(val);
            if (std::isfinite(mag)) rep.max_coordinate = std::max(rep.max_coordinate, mag);
            if (!(mag <= plan.box_bound))
              rec.add({InvariantId::Boundedness, t, h, i, c, val, plan.box_bound,
                       "coordinate outside the planned box"});
            if (b(i, c) != a(i, c) && !declared[c])
              rec.add({InvariantId::RegisterIntegrity, t, h, i, c, b(i, c) - a(i, c), 0.0,
                       "write outside the declared registers"});
            if ((R.key.contains(c) || R.value.contains(c)) && val != tr.initial.state()(i, c))
              rec.add({InvariantId::SlotPartition, t, h, i, c, val, tr.initial.state()(i, c),
                       "prompt key or value block changed"});
          }
        }
        if (b(input, R.one.begin) != 1.0)
          rec.add({InvariantId::ConstantOne, t, h, input, R.one.begin, b(input, R.one.begin), 1.0,
                   "constant coordinate drifted"});
      }

      // Phases that must be exact on the work token.
      if (bp.phase == Phase::Relu) {
        const double u_prev = mid(work, R.u.begin);
        const double u_new = after(work, R.u.begin);
        const double h_new = after(work, R.h.begin);
        const double expect = std::max(u_prev, 0.0);
        if (u_new != 0.0)
          rec.add({InvariantId::ExactPhase, t, 1, work, R.u.begin, u_new, 0.0, "u not cleared"});
        if (std::abs(h_new - expect) > 4.0 * eps * std::abs(expect))
          rec.add({InvariantId::ExactPhase, t, 1, work, R.h.begin, h_new, expect, "h != relu(u)"});
      }
      if (bp.phase == Phase::Seed) {
        for (std::size_t c = 0; c < R.x_copy.size; ++c) {
          const double got = after(work, R.x_copy[c]);
          const double want = x[c];
          if (std::abs(got - want) > 8.0 * eps * std::max(1.0, std::abs(want)))
            rec.add({InvariantId::ExactPhase, t, 1, work, R.x_copy[c], got, want, "x copy inexact"});
        }
        const double wf = after(work, R.work_flag.begin);
        if (std::abs(wf - 1.0) > 8.0 * eps)
          rec.add({InvariantId::ExactPhase, t, 1, work, R.work_flag.begin, wf, 1.0, "work flag inexact"});
      }
    }
  }
  if (!std::isfinite(rep.min_margin)) rep.min_margin = 0.0;
  return rep;
}

bool StepErrors::recursion_holds() const {
  for (std::size_t t = 0; t < measured.size(); ++t)
    if (!std::isnan(measured[t]) && !(measured[t] <= recursion_bound[t])) return false;
  return true;
}

StepErrors measure_step_errors(const Executor& executor, const ExecutorGeometry& g,
                               const MacroProgram& prog, const BudgetPlan& plan,
                               const PromptProgram& prompt, const ReluMlp& mlp,
                               std::span<const double> x) {
  if (prog.num_steps() != plan.num_steps())
    throw InvalidArgument("measure_step_errors: program and plan disagree on step count");
  const auto& R = g.registers;
  const std::size_t work = g.slots.total_slots + 1, output = g.slots.total_slots + 2;
  ExecutionTrace tr;
  executor.run(prompt.matrix, x, &tr);

  // Exact partial sums in long double.
  const std::size_t m = mlp.hidden_width(), d = mlp.input_dim();
  std::vector<long double> partial(m + 1, 0.0L);
  long double acc = 0.0L;
  for (std::size_t r = 0; r < m; ++r) {
    long double pre = mlp.b()[r];
    for (std::size_t i = 0; i < d; ++i) pre += static_cast<long double>(mlp.w()(r, i)) * x[i];
    acc += static_cast<long double>(mlp.a(r)) * std::max(pre, 0.0L);
    partial[r] = acc;
  }
  partial[m] = acc + mlp.c();

  StepErrors out;
  out.measured.assign(prog.num_steps(), std::nan(""));
  out.recursion_bound.assign(prog.num_steps(), 0.0);
  double prev = 0.0;
  for (std::size_t t = 0; t < prog.num_steps(); ++t) {
    const MacroStep& st = prog.steps[t];
    out.recursion_bound[t] = one_step_bound(prev, plan, t);
    if (!st.observable) {
      prev = out.recursion_bound[t];
      continue;
    }
    const Matrix& z = tr.after_ffn[st.last_block];
    long double ideal = 0.0L;
    double got = 0.0;
    switch (st.kind) {
      case MacroStep::Kind::Unit:
        ideal = st.unit < m ? partial[st.unit] : acc;
        got = z(work, R.acc.begin);
        break;
      case MacroStep::Kind::Bias:
        ideal = partial[m];
        got = z(work, R.acc.begin);
        break;
      case MacroStep::Kind::Transfer:
        ideal = partial[m];
        got = z(output, R.out.begin);
        break;
    }
    out.measured[t] = static_cast<double>(std::abs(static_cast<long double>(got) - ideal));
    prev = out.measured[t];
  }
  const double f = readout_scalar(executor.params(), TokenMatrix(g.slots.total_slots, tr.after_ffn.back()));
  out.final_error = static_cast<double>(std::abs(static_cast<long double>(f) - partial[m]));
  out.final_bound = total_bound(plan);
  return out;
}

}  // namespace promptvm
