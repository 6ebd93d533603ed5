// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/target_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "promptvm/error.hpp"

namespace promptvm {

ReluMlp::ReluMlp(std::vector<MlpLayer> layers, std::optional<double> declared_bound)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("mlp: no layers");
  std::size_t in = layers_.front().weights.cols();
  if (in == 0) throw InvalidArgument("mlp: input dimension must be positive");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.cols() != in || layer.bias.size() != layer.weights.rows() ||
        layer.weights.rows() == 0)
      throw InvalidArgument("mlp: layer " + std::to_string(l) + " does not chain");
    for (double v : layer.weights.data()) {
      if (!std::isfinite(v)) throw InvalidArgument("mlp: non-finite weight");
      max_entry_ = std::max(max_entry_, std::abs(v));
    }
    for (double v : layer.bias) {
      if (!std::isfinite(v)) throw InvalidArgument("mlp: non-finite bias");
      max_entry_ = std::max(max_entry_, std::abs(v));
    }
    in = layer.weights.rows();
  }
  if (in != 1) throw InvalidArgument("mlp: output must be scalar");
  if (declared_bound) {
    if (!(*declared_bound >= 0.0) || !std::isfinite(*declared_bound))
      throw InvalidArgument("mlp: declared bound must be finite and >= 0");
    if (max_entry_ > *declared_bound)
      throw InvalidArgument("mlp: entry of magnitude " + std::to_string(max_entry_) +
                            " exceeds declared bound " + std::to_string(*declared_bound));
    bound_ = *declared_bound;
  } else {
    bound_ = max_entry_;
  }
}

std::size_t ReluMlp::hidden_width() const {
  return layers_.size() >= 2 ? layers_.front().weights.rows() : 0;
}

namespace {

void require_one_hidden(const ReluMlp& m) {
  if (m.layers().size() != 2) throw UnsupportedShape("mlp: expected exactly one hidden layer");
}

}  // namespace

const Matrix& ReluMlp::w() const {
  require_one_hidden(*this);
  return layers_[0].weights;
}

const Vector& ReluMlp::b() const {
  require_one_hidden(*this);
  return layers_[0].bias;
}

double ReluMlp::a(std::size_t r) const {
  require_one_hidden(*this);
  return layers_[1].weights(0, r);
}

double ReluMlp::c() const {
  require_one_hidden(*this);
  return layers_[1].bias[0];
}

void MlpShapeClass::validate() const {
  if (input_dim == 0 || hidden_width == 0) throw InvalidArgument("shape: dimensions must be positive");
  if (depth < 2) throw InvalidArgument("shape: depth must be at least 2");
  if (!(param_bound >= 0.0) || !std::isfinite(param_bound))
    throw InvalidArgument("shape: parameter bound must be finite and >= 0");
  if (!(domain_radius > 0.0) || !std::isfinite(domain_radius))
    throw InvalidArgument("shape: domain radius must be finite and > 0");
}

bool MlpShapeClass::admits(const ReluMlp& mlp) const {
  return mlp.depth() == depth && mlp.input_dim() == input_dim &&
         mlp.hidden_width() <= hidden_width && mlp.max_abs_entry() <= param_bound;
}

double mlp_forward(const ReluMlp& mlp, std::span<const double> x) {
  if (x.size() != mlp.input_dim())
    throw InvalidArgument("mlp_forward: input has dimension " + std::to_string(x.size()) +
                          ", expected " + std::to_string(mlp.input_dim()));
  Vector h(x.begin(), x.end());
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Vector next = multiply(layers[l].weights, h);
    for (std::size_t r = 0; r < next.size(); ++r) {
      next[r] += layers[l].bias[r];
      if (l + 1 < layers.size()) next[r] = std::max(next[r], 0.0);
    }
    h = std::move(next);
  }
  return h[0];
}

ReluMlp one_hidden_layer(const Matrix& w, const Vector& b, const Vector& a, double c,
                         std::optional<double> declared_bound) {
  if (b.size() != w.rows() || a.size() != w.rows())
    throw InvalidArgument("one_hidden_layer: inconsistent unit count");
  Matrix out(1, a.size());
  for (std::size_t r = 0; r < a.size(); ++r) out(0, r) = a[r];
  return ReluMlp({MlpLayer{w, b}, MlpLayer{std::move(out), Vector{c}}}, declared_bound);
}

ReluMlp mlp_from_pl1d(const Pl1D& pl) {
  TwoLayerNet net = pl_to_relu(pl);
  Vector a(net.hidden_width());
  for (std::size_t r = 0; r < a.size(); ++r) a[r] = net.w2(0, r);
  return one_hidden_layer(net.w1, net.b1, a, net.b2[0]);
}

ReluMlp random_mlp(const MlpShapeClass& shape, std::uint64_t seed) {
  shape.validate();
  if (shape.depth != 3) throw UnsupportedShape("random_mlp: only depth 3 is supported");
  std::mt19937_64 rng(seed);
  const double lam = shape.param_bound;
  std::uniform_real_distribution<double> dist(-lam, lam);
  auto draw = [&] { return lam == 0.0 ? 0.0 : dist(rng); };
  const std::size_t d = shape.input_dim, m = shape.hidden_width;
  Matrix w(m, d);
  Vector b(m), a(m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < d; ++i) w(r, i) = draw();
    b[r] = draw();
    a[r] = draw();
  }
  const double c = draw();
  return one_hidden_layer(w, b, a, c, lam);
}

}  // namespace promptvm
