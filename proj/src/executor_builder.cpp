// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/executor_builder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "promptvm/error.hpp"
#include "promptvm/relu_gadgets.hpp"

namespace promptvm {

std::vector<std::pair<std::string, Range>> RegisterLayout::named() const {
  return {{"key", key},       {"value", value},       {"landing", landing}, {"x_in", x_in},
          {"one", one},       {"out_flag", out_flag}, {"x_copy", x_copy},   {"work_flag", work_flag},
          {"query", query},   {"u", u},               {"h", h},             {"acc", acc},
          {"out", out}};
}

void RegisterLayout::validate() const {
  std::vector<int> owner(model_width, -1);
  int idx = 0;
  for (const auto& [name, r] : named()) {
    if (r.end() > model_width) throw InvalidArgument("register layout: " + name + " exceeds D");
    for (std::size_t c = r.begin; c < r.end(); ++c) {
      if (owner[c] >= 0) throw InvalidArgument("register layout: " + name + " overlaps");
      owner[c] = idx;
    }
    ++idx;
  }
}

RegisterLayout make_register_layout(std::size_t input_dim, std::size_t total_slots) {
  RegisterLayout r;
  std::size_t next = 0;
  auto take = [&](std::size_t n) {
    Range out{next, n};
    next += n;
    return out;
  };
  r.key = take(total_slots);
  r.value = take(input_dim + 2);
  r.landing = take(input_dim + 2);
  r.x_in = take(input_dim);
  r.one = take(1);
  r.out_flag = take(1);
  r.x_copy = take(input_dim);
  r.work_flag = take(1);
  r.query = take(total_slots);
  r.u = take(1);
  r.h = take(1);
  r.acc = take(1);
  r.out = take(1);
  r.model_width = next;
  r.validate();
  return r;
}

ExecutorGeometry make_geometry(const MlpShapeClass& shape, std::size_t total_slots) {
  shape.validate();
  if (shape.depth != 3) throw UnsupportedShape("executor supports one hidden layer (depth 3) only");
  const std::size_t m = shape.hidden_width;
  if (total_slots == 0) total_slots = m + 2;
  // A zero padding row would be indistinguishable from the work token to
  // every layer, so the executor needs exactly the used slots.
  if (total_slots != m + 2)
    throw BuildError("executor layout needs exactly " + std::to_string(m + 2) +
                     " slots (no padding rows), got " + std::to_string(total_slots));
  ExecutorGeometry g;
  g.shape = shape;
  g.registers = make_register_layout(shape.input_dim, total_slots);
  g.slots = make_slot_layout(shape.input_dim, m, total_slots, g.registers.model_width);
  if (g.slots.value_offset != g.registers.value.begin || g.slots.value_dim != g.registers.value.size)
    throw BuildError("slot layout and register layout disagree on the value block");
  return g;
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Seed: return "seed";
    case Phase::Read: return "read";
    case Phase::Relu: return "relu";
    case Phase::MulAcc: return "mulacc";
    case Phase::Transfer: return "transfer";
  }
  return "?";
}

namespace {

std::vector<bool> coords(std::size_t width, std::initializer_list<Range> ranges) {
  std::vector<bool> out(width, false);
  for (const auto& r : ranges)
    for (std::size_t c = r.begin; c < r.end(); ++c) out[c] = true;
  return out;
}

}  // namespace

MacroProgram make_macro_program(const ExecutorGeometry& g) {
  const auto& R = g.registers;
  const std::size_t D = R.model_width;
  const std::size_t m = g.shape.hidden_width;
  MacroProgram p;

  p.blocks.push_back({Phase::Seed, 0, std::nullopt, false, coords(D, {R.x_copy, R.work_flag}),
                      coords(D, {R.x_copy, R.work_flag, R.query})});
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t first = p.blocks.size();
    p.blocks.push_back({Phase::Read, r, r, false, coords(D, {R.landing}),
                        coords(D, {R.u, R.landing, R.query})});
    p.blocks.push_back({Phase::Relu, r, g.slots.null_slot, false, coords(D, {R.landing}),
                        coords(D, {R.h, R.u, R.query})});
    const std::size_t target = r + 1 == m ? g.slots.bias_slot : g.slots.null_slot;
    p.blocks.push_back({Phase::MulAcc, r, target, false, coords(D, {R.landing}),
                        coords(D, {R.acc, R.landing, R.h, R.query})});
    p.steps.push_back({MacroStep::Kind::Unit, r, first, first + 2, r + 1 < m});
  }
  const std::size_t last = p.blocks.size() - 1;
  p.steps.push_back({MacroStep::Kind::Bias, 0, last, last, true});
  p.blocks.push_back({Phase::Transfer, 0, g.slots.null_slot, true, coords(D, {R.out}), coords(D, {})});
  p.steps.push_back({MacroStep::Kind::Transfer, 0, last + 1, last + 1, true});

  if (p.num_blocks() != 3 * m + 2) throw BuildError("macro program must have 3m+2 blocks");
  return p;
}

void BudgetPlan::validate() const {
  const std::size_t n = num_steps();
  if (n == 0 || delta_arith.size() != n || lipschitz.size() != n || state_lipschitz.size() != n ||
      realized_arith.size() != n)
    throw InvalidArgument("budget plan: per-step vectors have inconsistent lengths");
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double k = 1.0;
    for (std::size_t s = t + 1; s < n; ++s) k *= state_lipschitz[s];
    sum += (delta_arith[t] + lipschitz[t] * delta_route[t]) * k;
    if (realized_arith[t] > delta_arith[t])
      throw InvalidArgument("budget plan: gadget error exceeds arithmetic budget at step " +
                            std::to_string(t));
  }
  const double cap = epsilon_exec / readout_constant;
  if (sum > cap * (1.0 + 1e-12))
    throw InvalidArgument("budget plan: local budgets sum to " + std::to_string(sum) +
                          " > epsilon_exec / C_out = " + std::to_string(cap));
  if (!(impurity > 0.0 && impurity < 1.0)) throw InvalidArgument("budget plan: rho outside (0,1)");
  const double tau_max = margin / std::log(static_cast<double>(num_tokens - 1) / impurity);
  if (temperature > tau_max * (1.0 + 1e-12))
    throw InvalidArgument("budget plan: temperature exceeds the admissible bound for rho");
}

BudgetPlan plan_budgets(double eps_exec, const MlpShapeClass& shape, const PlanOptions& opt) {
  if (!(eps_exec > 0.0) || !std::isfinite(eps_exec)) throw InvalidArgument("plan: epsilon_exec must be > 0");
  if (!(opt.margin > 0.0) || !std::isfinite(opt.margin)) throw InvalidArgument("plan: margin must be > 0");
  const ExecutorGeometry geo = make_geometry(shape, opt.total_slots);
  const double lam = shape.param_bound;
  if (!(lam > 0.0)) throw InvalidArgument("plan: parameter bound must be > 0");
  const double d = static_cast<double>(shape.input_dim);
  const double rad = shape.domain_radius;
  const std::size_t m = shape.hidden_width;

  BudgetPlan p;
  p.epsilon_exec = eps_exec;
  p.epsilon_total = opt.epsilon_total > 0.0 ? opt.epsilon_total : eps_exec;
  p.epsilon_approx = opt.epsilon_approx;
  p.total_slots = geo.slots.total_slots;
  p.num_tokens = geo.tokens();
  p.model_width = geo.registers.model_width;
  p.num_blocks = 3 * m + 2;
  p.readout_constant = 1.0;
  p.margin = opt.margin;

  const std::size_t steps = m + 2;
  const double b = eps_exec / (2.0 * static_cast<double>(steps) * p.readout_constant);

  // Unit step, ideal acc += a*relu(w.x + b). A read error e on every payload
  // entry moves the step by at most L_unit * e; the gadgets add the rest.
  const double preact = lam * (d * rad + 1.0);
  const double l_unit = (lam + b) * (d * rad + 1.0) + preact + 1.0;
  const double route_unit = b / l_unit;

  p.delta_arith.assign(steps, b);
  p.state_lipschitz.assign(steps, 1.0);
  p.lipschitz.assign(steps, 1.0);
  p.delta_route.assign(steps, b);
  for (std::size_t r = 0; r < m; ++r) {
    p.lipschitz[r] = l_unit;
    p.delta_route[r] = route_unit;
  }

  const double eps_read = b / (2.0 * d * (lam + b));
  const double eps_mulacc = b / 2.0;
  p.read_box_w = lam + route_unit;
  p.read_box_x = rad;
  p.preact_bound = preact + d * eps_read + (d * rad + 1.0) * route_unit;
  p.mulacc_box_a = lam + route_unit;
  p.mulacc_box_h = p.preact_bound;

  constexpr std::size_t kMaxKnots = std::size_t{1} << 22;
  auto knots = [&](double bx, double by, double eps, const char* which) {
    std::size_t k = 0;
    try {
      k = product_knots_for(bx, by, eps);
    } catch (const InvalidArgument&) {
      k = kMaxKnots + 1;
    }
    if (k > kMaxKnots)
      throw InfeasiblePlan(std::string(which) + " knot count",
                           "product gadget needs more than " + std::to_string(kMaxKnots) +
                               " knots for error " + std::to_string(eps));
    return k;
  };
  p.read_knots = knots(p.read_box_w, p.read_box_x, eps_read, "pre-activation");
  p.mulacc_knots = knots(p.mulacc_box_a, p.mulacc_box_h, eps_mulacc, "multiply-accumulate");
  auto realized = [](double bx, double by, std::size_t k) {
    const double eta = 4.0 * std::sqrt(bx * by) / static_cast<double>(k - 1);
    return eta * eta / 8.0;
  };
  p.read_product_error = realized(p.read_box_w, p.read_box_x, p.read_knots);
  p.mulacc_product_error = realized(p.mulacc_box_a, p.mulacc_box_h, p.mulacc_knots);
  p.realized_arith.assign(steps, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    p.realized_arith[r] = p.mulacc_product_error + (lam + b) * d * p.read_product_error;

  p.value_bound = lam;
  p.acc_bound = static_cast<double>(m) *
                    ((lam + route_unit) * p.preact_bound + p.mulacc_product_error + b) +
                lam + b;

  // Off-target mass per read. A unit's output weight passes three reads
  // before use (6B rho), the bias record two (4B rho), and the transfer
  // reads accumulators bounded by acc_bound.
  const double rho_unit = route_unit / (6.0 * p.value_bound);
  const double rho_bias = p.delta_route[m] / (4.0 * p.value_bound);
  const double rho_transfer = p.delta_route[m + 1] / (2.0 * p.acc_bound);
  p.impurity = std::min({rho_unit, rho_bias, rho_transfer, 0.5});
  p.temperature = temperature_for_impurity(p.margin, p.num_tokens, p.impurity);
  if (!(p.temperature > 1e-300) || !std::isfinite(p.temperature))
    throw InfeasiblePlan("temperature", "required temperature underflows");
  p.query_scale = p.margin * std::sqrt(static_cast<double>(p.model_width));

  p.box_bound = std::max({p.query_scale, p.acc_bound, p.preact_bound, lam + b, rad, 1.0}) *
                (1.0 + 1e-6);
  p.validate();
  return p;
}

double one_step_bound(double state_err, const BudgetPlan& plan, std::size_t t) {
  if (t >= plan.num_steps()) throw InvalidArgument("one_step_bound: step out of range");
  return plan.state_lipschitz[t] * state_err + plan.delta_arith[t] +
         plan.lipschitz[t] * plan.delta_route[t];
}

double total_bound(const BudgetPlan& plan) {
  double err = 0.0;
  for (std::size_t t = 0; t < plan.num_steps(); ++t) err = one_step_bound(err, plan, t);
  return err;
}

const char* to_string(Sabotage s) {
  switch (s) {
    case Sabotage::None: return "none";
    case Sabotage::ShrinkBeta: return "shrink-beta";
    case Sabotage::InflateTau: return "inflate-tau";
    case Sabotage::CorruptPhase: return "corrupt-phase";
  }
  return "?";
}

Sabotage parse_sabotage(const std::string& s) {
  for (auto v : {Sabotage::None, Sabotage::ShrinkBeta, Sabotage::InflateTau, Sabotage::CorruptPhase})
    if (s == to_string(v)) return v;
  throw InvalidArgument("unknown sabotage mode '" + s + "'");
}

namespace {

// Places gadget nets into a D-wide FFN. Each gadget reads and writes a list
// of coordinates; outputs of different gadgets on one coordinate add up.
class FfnAssembler {
 public:
  explicit FfnAssembler(std::size_t width) : width_(width), b2_(width, 0.0) {}

  void add(const TwoLayerNet& net, const std::vector<std::size_t>& in,
           const std::vector<std::size_t>& out) {
    net.validate();
    if (in.size() != net.input_dim() || out.size() != net.output_dim())
      throw BuildError("gadget placement does not match gadget dimensions");
    for (std::size_t j = 0; j < net.hidden_width(); ++j) {
      const std::size_t row = b1_.size();
      for (std::size_t k = 0; k < in.size(); ++k)
        if (net.w1(j, k) != 0.0) w1_.push_back({row, in[k], net.w1(j, k)});
      b1_.push_back(net.b1[j]);
      for (std::size_t o = 0; o < out.size(); ++o)
        if (net.w2(o, j) != 0.0) w2_.push_back({out[o], row, net.w2(o, j)});
    }
    for (std::size_t o = 0; o < out.size(); ++o) b2_[out[o]] += net.b2[o];
  }

  // delta(out_i) = sum_j u(i, j) * z(in_j), realized exactly.
  void add_linear(const std::vector<std::size_t>& in, const std::vector<std::size_t>& out,
                  const Matrix& u) {
    add(exact_affine(u, Vector(out.size(), 0.0)), in, out);
  }

  void fill(BlockWeights& w) const {
    const std::size_t h = b1_.size();
    w.ffn_w1 = SparseMatrix::from_triplets(h, width_, w1_);
    w.ffn_b1 = b1_;
    w.ffn_w2 = SparseMatrix::from_triplets(width_, h, w2_);
    w.ffn_b2 = b2_;
  }

 private:
  std::size_t width_;
  std::vector<Triplet> w1_, w2_;
  Vector b1_;
  Vector b2_;
};

std::vector<std::size_t> span_of(const Range& r) {
  std::vector<std::size_t> out(r.size);
  std::iota(out.begin(), out.end(), r.begin);
  return out;
}

Matrix scaled_identity(std::size_t n, double s) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = s;
  return m;
}

// Moves the work token's query from slot `from` to slot `to`. The gate
// 2 relu(wf - 1/2) is 1 on the work token and exactly 0 on
// every other token, whose work flag stays near zero.
void add_query_move(FfnAssembler& a, const RegisterLayout& R, std::size_t from, std::size_t to,
                    double beta) {
  if (from == to) return;
  TwoLayerNet gate{Matrix(1, 1, 1.0), Vector{-0.5}, Matrix(2, 1), Vector(2, 0.0)};
  gate.w2(0, 0) = -2.0 * beta;
  gate.w2(1, 0) = 2.0 * beta;
  a.add(gate, {R.work_flag.begin}, {R.query[from], R.query[to]});
}

void add_query_set(FfnAssembler& a, const RegisterLayout& R, std::size_t to, double beta,
                   double flag_scale) {
  TwoLayerNet gate{Matrix(1, 1, flag_scale), Vector{-0.5}, Matrix(1, 1, 2.0 * beta), Vector{0.0}};
  a.add(gate, {R.work_flag.begin}, {R.query[to]});
}

}  // namespace

ExecutorParams build_executor(const MlpShapeClass& shape, const BudgetPlan& plan,
                              const SlotLayout& layout, const KeyCodebook& codebook,
                              const BuildOptions& options) {
  const ExecutorGeometry geo = make_geometry(shape, layout.total_slots);
  if (!(layout == geo.slots)) throw BuildError("slot layout does not match the shape class");
  if (!codebook.is_basis() || codebook.key_dim() != layout.key_dim)
    throw BuildError("executor requires the basis codebook over all slots");
  if (plan.total_slots != layout.total_slots || plan.model_width != geo.registers.model_width ||
      plan.num_tokens != geo.tokens() || plan.num_steps() != shape.hidden_width + 2)
    throw BuildError("budget plan was made for a different layout");
  if (plan.read_knots < 3 || plan.mulacc_knots < 3) throw BuildError("budget plan has no knot counts");

  const auto& R = geo.registers;
  const std::size_t D = R.model_width;
  const std::size_t d = shape.input_dim;
  const std::size_t n = geo.tokens();
  const std::size_t null_slot = layout.null_slot;
  const MacroProgram prog = make_macro_program(geo);

  double beta = plan.query_scale;
  double tau = plan.temperature;
  if (options.sabotage == Sabotage::ShrinkBeta) beta *= 0.5;
  if (options.sabotage == Sabotage::InflateTau) tau *= 10.0;

  const Gadget read_product = product_gadget(plan.read_box_w, plan.read_box_x, plan.read_knots);
  const Gadget mulacc_product = product_gadget(plan.mulacc_box_a, plan.mulacc_box_h, plan.mulacc_knots);

  auto query_weights = [&](bool transfer) {
    std::vector<Triplet> t;
    for (std::size_t c = 0; c < layout.key_dim; ++c) t.push_back({R.key[c], R.key[null_slot], beta});
    t.push_back({R.one.begin, R.key[null_slot], beta});
    t.push_back({R.out_flag.begin, transfer ? R.work_flag.begin : R.key[null_slot], beta});
    for (std::size_t c = 0; c < layout.key_dim; ++c) t.push_back({R.query[c], R.key[c], 1.0});
    return SparseMatrix::from_triplets(D, D, t);
  };
  auto key_weights = [&](bool transfer) {
    std::vector<Triplet> t;
    for (std::size_t c = 0; c < layout.key_dim; ++c) t.push_back({R.key[c], R.key[c], 1.0});
    // The query register is exactly zero off the work token, so it keys
    // the work token without interference from parked tokens.
    if (transfer) t.push_back({R.query[null_slot], R.work_flag.begin, 1.0 / beta});
    return SparseMatrix::from_triplets(D, D, t);
  };
  auto copy_weights = [&](std::initializer_list<std::pair<Range, Range>> maps) {
    std::vector<Triplet> t;
    for (const auto& [src, dst] : maps)
      for (std::size_t i = 0; i < src.size; ++i) t.push_back({src[i], dst[i], 1.0});
    return SparseMatrix::from_triplets(D, D, t);
  };

  std::vector<BlockWeights> blocks;
  for (std::size_t t = 0; t < prog.num_blocks(); ++t) {
    const BlockPlan& bp = prog.blocks[t];
    const bool transfer = bp.phase == Phase::Transfer;
    BlockWeights w;
    w.wq = query_weights(transfer);
    w.wk = key_weights(transfer);
    FfnAssembler ffn(D);
    const std::size_t next_target =
        t + 1 < prog.num_blocks() ? prog.blocks[t + 1].work_target.value_or(null_slot) : null_slot;

    switch (bp.phase) {
      case Phase::Seed: {
        w.wv = copy_weights({{R.x_in, R.x_copy}, {R.one, R.work_flag}});
        // The work token received (x, 1) / n from the uniform read.
        const double scale = static_cast<double>(n - 1);
        std::vector<std::size_t> io = span_of(R.x_copy);
        io.push_back(R.work_flag.begin);
        ffn.add_linear(io, io, scaled_identity(d + 1, scale));
        add_query_set(ffn, R, next_target, beta, static_cast<double>(n));
        break;
      }
      case Phase::Read: {
        w.wv = copy_weights({{R.value, R.landing}});
        for (std::size_t i = 0; i < d; ++i)
          ffn.add(read_product.net, {R.landing[i], R.x_copy[i]}, {R.u.begin});
        Matrix bias_minus_u(1, 2);
        bias_minus_u(0, 0) = 1.0;
        bias_minus_u(0, 1) = -1.0;
        ffn.add_linear({R.landing[d], R.u.begin}, {R.u.begin}, bias_minus_u);
        std::vector<std::size_t> wb;
        for (std::size_t i = 0; i <= d; ++i) wb.push_back(R.landing[i]);
        ffn.add_linear(wb, wb, scaled_identity(d + 1, -1.0));
        if (options.sabotage == Sabotage::CorruptPhase)
          ffn.add_linear({R.landing[d + 1]}, {R.acc.begin}, scaled_identity(1, 1.0));
        add_query_move(ffn, R, *bp.work_target, next_target, beta);
        break;
      }
      case Phase::Relu: {
        w.wv = copy_weights({{R.value, R.landing}});
        TwoLayerNet relu{Matrix(1, 1, 1.0), Vector{0.0}, Matrix(1, 1, 1.0), Vector{0.0}};
        ffn.add(relu, {R.u.begin}, {R.h.begin});
        ffn.add_linear({R.h.begin, R.u.begin}, {R.h.begin, R.u.begin}, scaled_identity(2, -1.0));
        add_query_move(ffn, R, *bp.work_target, next_target, beta);
        break;
      }
      case Phase::MulAcc: {
        w.wv = copy_weights({{R.value, R.landing}});
        ffn.add(mulacc_product.net, {R.landing[d + 1], R.h.begin}, {R.acc.begin});
        // Landing slot 0 holds c after the bias read and near-zero otherwise.
        ffn.add_linear({R.landing[0]}, {R.acc.begin}, scaled_identity(1, 1.0));
        ffn.add_linear(span_of(R.landing), span_of(R.landing), scaled_identity(R.landing.size, -1.0));
        ffn.add_linear({R.h.begin}, {R.h.begin}, scaled_identity(1, -1.0));
        add_query_move(ffn, R, *bp.work_target, next_target, beta);
        break;
      }
      case Phase::Transfer: {
        w.wv = copy_weights({{R.acc, R.out}});
        break;
      }
    }
    ffn.fill(w);
    blocks.push_back(std::move(w));
  }

  ExecutorParams::Fields f;
  f.blocks = std::move(blocks);
  f.input_embed = Matrix(D, d);
  for (std::size_t i = 0; i < d; ++i) f.input_embed(R.x_in[i], i) = 1.0;
  f.input_bias = Vector(D, 0.0);
  f.input_bias[R.one.begin] = 1.0;
  f.initial_output = Vector(D, 0.0);
  f.initial_output[R.out_flag.begin] = 1.0;
  f.initial_work = Vector(D, 0.0);
  f.readout = Vector(D, 0.0);
  f.readout[R.out.begin] = 1.0;
  f.readout_bias = 0.0;
  f.temperature = tau;
  f.model_width = D;
  f.prompt_len = layout.total_slots;
  f.domain_radius = shape.domain_radius;
  return ExecutorParams(std::move(f));
}

}  // namespace promptvm
