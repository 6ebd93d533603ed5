// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/executor_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <string>

#include "promptvm/error.hpp"

namespace promptvm {

TokenMatrix::TokenMatrix(std::size_t prompt_len, std::size_t width)
    : prompt_len_(prompt_len), state_(prompt_len + 3, width) {}

TokenMatrix::TokenMatrix(std::size_t prompt_len, Matrix state)
    : prompt_len_(prompt_len), state_(std::move(state)) {
  if (state_.rows() != prompt_len_ + 3)
    throw InvalidArgument("token matrix: expected " + std::to_string(prompt_len_ + 3) +
                          " rows, got " + std::to_string(state_.rows()));
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void BlockWeights::validate(std::size_t d) const {
  require(wq.rows() == d && wq.cols() == d, "block weights: W_Q must be DxD");
  require(wk.rows() == d && wk.cols() == d, "block weights: W_K must be DxD");
  require(wv.rows() == d && wv.cols() == d, "block weights: W_V must be DxD");
  const std::size_t h = ffn_w1.rows();
  require(ffn_w1.cols() == d, "block weights: W_1 must have D columns");
  require(ffn_b1.size() == h, "block weights: b_1 length must equal hidden width");
  require(ffn_w2.rows() == d && ffn_w2.cols() == h, "block weights: W_2 must be D x h");
  require(ffn_b2.size() == d, "block weights: b_2 length must equal D");
  require(all_finite(ffn_b1) && all_finite(ffn_b2), "block weights: non-finite bias");
}

BlockWeights BlockWeights::zero(std::size_t d) {
  BlockWeights w;
  w.wq = SparseMatrix(d, d);
  w.wk = SparseMatrix(d, d);
  w.wv = SparseMatrix(d, d);
  w.ffn_w1 = SparseMatrix(0, d);
  w.ffn_w2 = SparseMatrix(d, 0);
  w.ffn_b2 = Vector(d, 0.0);
  return w;
}

ExecutorParams::ExecutorParams(Fields fields) : f_(std::move(fields)) {
  const std::size_t d = f_.model_width;
  require(d > 0, "executor: model width must be positive");
  require(std::isfinite(f_.temperature) && f_.temperature > 0.0, "executor: temperature must be > 0");
  require(std::isfinite(f_.domain_radius) && f_.domain_radius > 0.0,
          "executor: domain radius must be > 0");
  require(f_.input_embed.rows() == d, "executor: E_x must have D rows");
  require(f_.input_bias.size() == d && f_.initial_output.size() == d &&
              f_.initial_work.size() == d && f_.readout.size() == d,
          "executor: token vectors must have length D");
  require(all_finite(f_.input_embed.data()) && all_finite(f_.input_bias) &&
              all_finite(f_.initial_output) && all_finite(f_.initial_work) &&
              all_finite(f_.readout) && std::isfinite(f_.readout_bias),
          "executor: non-finite embedding or readout");
  for (const auto& b : f_.blocks) b.validate(d);
}

bool ExecutorParams::operator==(const ExecutorParams& o) const {
  const Fields& a = f_;
  const Fields& b = o.f_;
  return a.blocks == b.blocks && a.input_embed == b.input_embed && a.input_bias == b.input_bias &&
         a.initial_output == b.initial_output && a.initial_work == b.initial_work &&
         a.readout == b.readout && a.readout_bias == b.readout_bias &&
         a.temperature == b.temperature && a.model_width == b.model_width &&
         a.prompt_len == b.prompt_len && a.domain_radius == b.domain_radius;
}

Vector softmax_tau(std::span<const double> scores, double tau) {
  if (!(std::isfinite(tau) && tau > 0.0)) throw InvalidArgument("softmax: tau must be > 0");
  if (scores.empty()) throw InvalidArgument("softmax: empty score vector");
  if (!all_finite(scores)) throw InvalidArgument("softmax: non-finite score");
  const double m = *std::max_element(scores.begin(), scores.end());
  Vector p(scores.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    p[j] = std::exp((scores[j] - m) / tau);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

// Projection Z -> Z W restricted to a set of output columns, stored compactly.
struct Projection {
  std::vector<std::uint32_t> src_start;  // per source row, offsets into dst/val
  std::vector<std::uint32_t> src;
  std::vector<std::uint32_t> dst;  // compact column index
  std::vector<double> val;

  Projection() = default;
  Projection(const SparseMatrix& w, const std::vector<int>& compact) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      auto cs = w.row_cols(r);
      auto vs = w.row_values(r);
      const std::size_t before = dst.size();
      for (std::size_t k = 0; k < cs.size(); ++k) {
        if (compact[cs[k]] < 0) continue;
        dst.push_back(static_cast<std::uint32_t>(compact[cs[k]]));
        val.push_back(vs[k]);
      }
      if (dst.size() > before) {
        src.push_back(static_cast<std::uint32_t>(r));
        src_start.push_back(static_cast<std::uint32_t>(before));
      }
    }
    src_start.push_back(static_cast<std::uint32_t>(dst.size()));
  }

  void apply(std::span<const double> z, double* out) const {
    for (std::size_t s = 0; s < src.size(); ++s) {
      const double a = z[src[s]];
      if (a == 0.0) continue;
      for (std::uint32_t k = src_start[s]; k < src_start[s + 1]; ++k) out[dst[k]] += a * val[k];
    }
  }
};

struct AttentionPlan {
  std::vector<std::uint32_t> score_cols;
  std::vector<std::uint32_t> value_cols;
  Projection q, k, v;
  double root_width = 1.0;

  explicit AttentionPlan(const BlockWeights& w) {
    const std::size_t d = w.wq.rows();
    auto qc = w.wq.nonzero_cols();
    auto kc = w.wk.nonzero_cols();
    auto vc = w.wv.nonzero_cols();
    std::vector<int> sc(d, -1), vcmp(d, -1);
    for (std::size_t c = 0; c < d; ++c) {
      if (qc[c] && kc[c]) {
        sc[c] = static_cast<int>(score_cols.size());
        score_cols.push_back(static_cast<std::uint32_t>(c));
      }
      if (vc[c]) {
        vcmp[c] = static_cast<int>(value_cols.size());
        value_cols.push_back(static_cast<std::uint32_t>(c));
      }
    }
    q = Projection(w.wq, sc);
    k = Projection(w.wk, sc);
    v = Projection(w.wv, vcmp);
    root_width = std::sqrt(static_cast<double>(d));
  }

  // Writes the attention output into delta (n x D, zero-initialised by caller).
  void run(const Matrix& z, double tau, Matrix& delta, Matrix* weights) const {
    const std::size_t n = z.rows();
    const std::size_t ns = score_cols.size();
    const std::size_t nv = value_cols.size();
    std::vector<double> qm(n * ns, 0.0), km(n * ns, 0.0), vm(n * nv, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = z.row(i);
      q.apply(zi, qm.data() + i * ns);
      k.apply(zi, km.data() + i * ns);
      v.apply(zi, vm.data() + i * nv);
    }
    std::vector<double> s(n), out(nv);
    const double root = root_width;
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = qm.data() + i * ns;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        const double* kj = km.data() + j * ns;
        double dot = 0.0;
        for (std::size_t c = 0; c < ns; ++c) dot += qi[c] * kj[c];
        s[j] = dot / root;
        mx = std::max(mx, s[j]);
      }
      if (!std::isfinite(mx)) throw InvalidArgument("attention: non-finite score");
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        s[j] = std::exp((s[j] - mx) / tau);
        sum += s[j];
      }
      for (std::size_t j = 0; j < n; ++j) s[j] /= sum;
      if (weights) std::copy(s.begin(), s.end(), weights->row(i).begin());
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = s[j];
        const double* vj = vm.data() + j * nv;
        for (std::size_t c = 0; c < nv; ++c) out[c] += a * vj[c];
      }
      auto di = delta.row(i);
      for (std::size_t c = 0; c < nv; ++c) di[value_cols[c]] = out[c];
    }
  }
};

void check_dims(const TokenMatrix& z, const BlockWeights& w) {
  if (w.wq.rows() != z.width()) throw InvalidArgument("block width does not match token width");
  w.validate(z.width());
}

void reference_ffn(const Matrix& z, const BlockWeights& w, Matrix& delta) {
  const std::size_t h = w.hidden_width();
  std::vector<double> hidden(h);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto zi = z.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      auto cs = w.ffn_w1.row_cols(j);
      auto vs = w.ffn_w1.row_values(j);
      double s = 0.0;
      for (std::size_t k = 0; k < cs.size(); ++k) s += vs[k] * zi[cs[k]];
      s += w.ffn_b1[j];
      hidden[j] = s > 0.0 ? s : 0.0;
    }
    auto di = delta.row(i);
    for (std::size_t r = 0; r < z.cols(); ++r) {
      auto cs = w.ffn_w2.row_cols(r);
      auto vs = w.ffn_w2.row_values(r);
      double s = 0.0;
      for (std::size_t k = 0; k < cs.size(); ++k) s += vs[k] * hidden[cs[k]];
      di[r] = s + w.ffn_b2[r];
    }
  }
}

// Hidden units sharing one first-layer row, sorted by decreasing bias. For a
// pre-activation l the active units are a prefix, so the output is
// l * sum(w2) + sum(w2 * b1) over that prefix.
struct HingeChain {
  std::vector<std::uint32_t> cols;
  std::vector<double> vals;
  std::vector<double> bias;
  std::vector<std::uint32_t> outs;
  std::vector<double> pw, pwb;  // (bias.size()+1) entries per output
};

struct CompiledFfn {
  std::vector<HingeChain> chains;
  Vector b2;
  std::vector<std::uint32_t> b2_nonzero;

  explicit CompiledFfn(const BlockWeights& w) : b2(w.ffn_b2) {
    const std::size_t h = w.hidden_width();
    std::map<std::vector<std::uint64_t>, std::size_t> index;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t j = 0; j < h; ++j) {
      auto cs = w.ffn_w1.row_cols(j);
      auto vs = w.ffn_w1.row_values(j);
      std::vector<std::uint64_t> key;
      for (std::size_t k = 0; k < cs.size(); ++k) {
        key.push_back(cs[k]);
        key.push_back(std::bit_cast<std::uint64_t>(vs[k]));
      }
      auto [it, inserted] = index.try_emplace(key, members.size());
      if (inserted) {
        members.emplace_back();
        HingeChain c;
        c.cols.assign(cs.begin(), cs.end());
        c.vals.assign(vs.begin(), vs.end());
        chains.push_back(std::move(c));
      }
      members[it->second].push_back(j);
    }

    // Column access to W_2.
    std::vector<std::vector<std::pair<std::uint32_t, double>>> w2_cols(h);
    for (std::size_t r = 0; r < w.ffn_w2.rows(); ++r) {
      auto cs = w.ffn_w2.row_cols(r);
      auto vs = w.ffn_w2.row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k)
        w2_cols[cs[k]].push_back({static_cast<std::uint32_t>(r), vs[k]});
    }

    for (std::size_t ci = 0; ci < chains.size(); ++ci) {
      auto& units = members[ci];
      std::stable_sort(units.begin(), units.end(),
                       [&](std::size_t a, std::size_t b) { return w.ffn_b1[a] > w.ffn_b1[b]; });
      HingeChain& c = chains[ci];
      for (auto u : units) c.bias.push_back(w.ffn_b1[u]);
      for (auto u : units)
        for (auto [r, v] : w2_cols[u])
          if (std::find(c.outs.begin(), c.outs.end(), r) == c.outs.end()) c.outs.push_back(r);
      std::sort(c.outs.begin(), c.outs.end());
      const std::size_t len = units.size() + 1;
      c.pw.assign(c.outs.size() * len, 0.0);
      c.pwb.assign(c.outs.size() * len, 0.0);
      for (std::size_t oi = 0; oi < c.outs.size(); ++oi) {
        double sw = 0.0, swb = 0.0;
        for (std::size_t k = 0; k < units.size(); ++k) {
          for (auto [r, v] : w2_cols[units[k]])
            if (r == c.outs[oi]) {
              sw += v;
              swb += v * c.bias[k];
            }
          c.pw[oi * len + k + 1] = sw;
          c.pwb[oi * len + k + 1] = swb;
        }
      }
    }
    std::erase_if(chains, [](const HingeChain& c) { return c.outs.empty(); });
    for (std::size_t r = 0; r < b2.size(); ++r)
      if (b2[r] != 0.0) b2_nonzero.push_back(static_cast<std::uint32_t>(r));
  }

  void run(const Matrix& z, Matrix& delta) const {
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto zi = z.row(i);
      auto di = delta.row(i);
      for (const auto& c : chains) {
        double l = 0.0;
        for (std::size_t k = 0; k < c.cols.size(); ++k) l += c.vals[k] * zi[c.cols[k]];
        const double neg = -l;
        std::size_t active;
        if (c.bias.size() == 1) {
          active = c.bias[0] > neg ? 1 : 0;
        } else {
          active = static_cast<std::size_t>(
              std::partition_point(c.bias.begin(), c.bias.end(), [neg](double b) { return b > neg; }) -
              c.bias.begin());
        }
        if (active == 0) continue;
        const std::size_t len = c.bias.size() + 1;
        for (std::size_t oi = 0; oi < c.outs.size(); ++oi)
          di[c.outs[oi]] += l * c.pw[oi * len + active] + c.pwb[oi * len + active];
      }
      for (auto r : b2_nonzero) di[r] += b2[r];
    }
  }
};

void add_checked(Matrix& z, const Matrix& delta, std::size_t block, const char* half) {
  auto& zd = z.data();
  const auto& dd = delta.data();
  for (std::size_t k = 0; k < zd.size(); ++k) {
    zd[k] += dd[k];
    if (!std::isfinite(zd[k]))
      throw InvariantBreach("finite-state", block,
                            std::string("non-finite coordinate after ") + half + " (token " +
                                std::to_string(k / z.cols()) + ", coordinate " +
                                std::to_string(k % z.cols()) + ")");
  }
}

}  // namespace

Matrix attention_step(const TokenMatrix& z, const BlockWeights& w, double tau, Matrix* weights) {
  check_dims(z, w);
  if (!(std::isfinite(tau) && tau > 0.0)) throw InvalidArgument("attention: tau must be > 0");
  Matrix delta(z.rows(), z.width());
  if (weights) *weights = Matrix(z.rows(), z.rows());
  AttentionPlan(w).run(z.state(), tau, delta, weights);
  return delta;
}

Matrix ffn_step(const TokenMatrix& z, const BlockWeights& w) {
  check_dims(z, w);
  Matrix delta(z.rows(), z.width());
  reference_ffn(z.state(), w, delta);
  return delta;
}

TokenMatrix initial_state(const ExecutorParams& params, const Matrix& prompt,
                          std::span<const double> x) {
  const std::size_t d = params.model_width();
  if (prompt.rows() != params.prompt_len() || prompt.cols() != d)
    throw InvalidArgument("prompt must be " + std::to_string(params.prompt_len()) + "x" +
                          std::to_string(d) + ", got " + std::to_string(prompt.rows()) + "x" +
                          std::to_string(prompt.cols()));
  if (x.size() != params.input_dim())
    throw InvalidArgument("input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(params.input_dim()));
  for (double xi : x)
    if (!std::isfinite(xi) || std::abs(xi) > params.domain_radius())
      throw PreconditionError("input coordinate " + std::to_string(xi) + " outside domain box [-" +
                              std::to_string(params.domain_radius()) + ", " +
                              std::to_string(params.domain_radius()) + "]");
  TokenMatrix z(params.prompt_len(), d);
  std::copy(prompt.data().begin(), prompt.data().end(), z.state().data().begin());
  const auto& f = params.fields();
  auto u = z.row(z.input_row());
  for (std::size_t r = 0; r < d; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) s += f.input_embed(r, c) * x[c];
    u[r] = s + f.input_bias[r];
  }
  std::copy(f.initial_work.begin(), f.initial_work.end(), z.row(z.work_row()).begin());
  std::copy(f.initial_output.begin(), f.initial_output.end(), z.row(z.output_row()).begin());
  return z;
}

TokenMatrix run_executor(const ExecutorParams& params, const Matrix& prompt,
                         std::span<const double> x, ExecutionTrace* trace) {
  TokenMatrix z = initial_state(params, prompt, x);
  if (trace) *trace = ExecutionTrace{{}, {}, {}, z};
  for (std::size_t t = 0; t < params.num_blocks(); ++t) {
    const auto& w = params.blocks()[t];
    Matrix weights;
    Matrix a = attention_step(z, w, params.temperature(), trace ? &weights : nullptr);
    add_checked(z.state(), a, t, "attention");
    if (trace) {
      trace->attention.push_back(std::move(weights));
      trace->after_attention.push_back(z.state());
    }
    Matrix phi = ffn_step(z, w);
    add_checked(z.state(), phi, t, "ffn");
    if (trace) trace->after_ffn.push_back(z.state());
  }
  return z;
}

double readout_scalar(const ExecutorParams& params, const TokenMatrix& final_state) {
  if (final_state.width() != params.model_width())
    throw InvalidArgument("readout: state width does not match executor");
  auto out = final_state.row(final_state.output_row());
  double s = 0.0;
  for (std::size_t c = 0; c < out.size(); ++c) s += params.readout()[c] * out[c];
  return s + params.readout_bias();
}

struct Executor::Compiled {
  std::vector<AttentionPlan> attention;
  std::vector<CompiledFfn> ffn;
};

Executor::Executor(std::shared_ptr<const ExecutorParams> params)
    : params_(std::move(params)), compiled_(std::make_unique<Compiled>()) {
  if (!params_) throw InvalidArgument("executor: null parameters");
  for (const auto& b : params_->blocks()) {
    compiled_->attention.emplace_back(b);
    compiled_->ffn.emplace_back(b);
  }
}

Executor::~Executor() = default;
Executor::Executor(Executor&&) noexcept = default;
Executor& Executor::operator=(Executor&&) noexcept = default;

TokenMatrix Executor::run(const Matrix& prompt, std::span<const double> x,
                          ExecutionTrace* trace) const {
  TokenMatrix z = initial_state(*params_, prompt, x);
  if (trace) *trace = ExecutionTrace{{}, {}, {}, z};
  Matrix delta(z.rows(), z.width());
  const double tau = params_->temperature();
  for (std::size_t t = 0; t < params_->num_blocks(); ++t) {
    std::fill(delta.data().begin(), delta.data().end(), 0.0);
    Matrix weights;
    if (trace) weights = Matrix(z.rows(), z.rows());
    compiled_->attention[t].run(z.state(), tau, delta, trace ? &weights : nullptr);
    add_checked(z.state(), delta, t, "attention");
    if (trace) {
      trace->attention.push_back(std::move(weights));
      trace->after_attention.push_back(z.state());
    }
    std::fill(delta.data().begin(), delta.data().end(), 0.0);
    compiled_->ffn[t].run(z.state(), delta);
    add_checked(z.state(), delta, t, "ffn");
    if (trace) trace->after_ffn.push_back(z.state());
  }
  return z;
}

double Executor::evaluate(const Matrix& prompt, std::span<const double> x) const {
  return readout_scalar(*params_, run(prompt, x));
}

}  // namespace promptvm
