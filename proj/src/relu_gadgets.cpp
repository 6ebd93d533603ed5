// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/relu_gadgets.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "promptvm/error.hpp"

namespace promptvm {

Pl1D::Pl1D(Vector knots, Vector values) : knots_(std::move(knots)), values_(std::move(values)) {
  if (knots_.empty()) throw InvalidArgument("pl: no knots");
  if (knots_.size() != values_.size()) throw InvalidArgument("pl: knots and values differ in length");
  for (std::size_t k = 0; k < knots_.size(); ++k) {
    if (!std::isfinite(knots_[k]) || !std::isfinite(values_[k]))
      throw InvalidArgument("pl: non-finite knot or value");
    if (k > 0 && !(knots_[k] > knots_[k - 1]))
      throw InvalidArgument("pl: knots must be strictly increasing (knot " + std::to_string(k) + ")");
  }
}

double Pl1D::slope(std::size_t k) const {
  if (k + 1 >= knots_.size()) throw InvalidArgument("pl: segment index out of range");
  return (values_[k + 1] - values_[k]) / (knots_[k + 1] - knots_[k]);
}

double Pl1D::operator()(double t) const {
  if (knots_.size() == 1) return values_[0];
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  std::size_t k = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  k = std::min(k, knots_.size() - 2);
  return values_[k] + slope(k) * (t - knots_[k]);
}

void TwoLayerNet::validate() const {
  const std::size_t h = w1.rows();
  if (b1.size() != h || w2.cols() != h || b2.size() != w2.rows())
    throw InvalidArgument("two-layer net: inconsistent dimensions");
}

Vector TwoLayerNet::operator()(std::span<const double> u) const {
  if (u.size() != input_dim()) throw InvalidArgument("two-layer net: input dimension mismatch");
  const std::size_t h = hidden_width();
  Vector hidden(h);
  for (std::size_t j = 0; j < h; ++j) {
    auto row = w1.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) s += row[k] * u[k];
    s += b1[j];
    hidden[j] = s > 0.0 ? s : 0.0;
  }
  Vector out(output_dim());
  for (std::size_t o = 0; o < out.size(); ++o) {
    auto row = w2.row(o);
    double s = 0.0;
    for (std::size_t j = 0; j < h; ++j) s += row[j] * hidden[j];
    out[o] = s + b2[o];
  }
  return out;
}

TwoLayerNet exact_affine(const Matrix& u, const Vector& c) {
  const std::size_t n = u.rows(), m = u.cols();
  if (c.size() != n) throw InvalidArgument("exact_affine: offset length must equal output count");
  // Hidden units 2k and 2k+1 hold relu(z_k) and relu(-z_k), so the output
  // sum visits the terms of U z in the order of a plain dot product.
  TwoLayerNet net{Matrix(2 * m, m), Vector(2 * m, 0.0), Matrix(n, 2 * m), c};
  for (std::size_t k = 0; k < m; ++k) {
    net.w1(2 * k, k) = 1.0;
    net.w1(2 * k + 1, k) = -1.0;
    for (std::size_t o = 0; o < n; ++o) {
      net.w2(o, 2 * k) = u(o, k);
      net.w2(o, 2 * k + 1) = -u(o, k);
    }
  }
  return net;
}

TwoLayerNet pl_to_relu(const Pl1D& pl) {
  const std::size_t k = pl.size();
  if (k < 2) throw InvalidArgument("pl_to_relu: need at least two knots");
  const auto& t = pl.knots();
  const double s0 = pl.slope(0);
  Matrix lin(1, 1, s0);
  TwoLayerNet affine = exact_affine(lin, Vector{pl.values()[0] - s0 * t[0]});

  const std::size_t interior = k - 2;
  const std::size_t h = affine.hidden_width() + interior;
  TwoLayerNet net{Matrix(h, 1), Vector(h, 0.0), Matrix(1, h), affine.b2};
  for (std::size_t j = 0; j < affine.hidden_width(); ++j) {
    net.w1(j, 0) = affine.w1(j, 0);
    net.w2(0, j) = affine.w2(0, j);
  }
  for (std::size_t i = 0; i < interior; ++i) {
    const std::size_t j = affine.hidden_width() + i;
    net.w1(j, 0) = 1.0;
    net.b1[j] = -t[i + 1];
    net.w2(0, j) = pl.slope(i + 1) - pl.slope(i);
  }
  return net;
}

Pl1D pl_interpolate(std::span<const std::pair<double, double>> samples) {
  Vector t, v;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i > 0 && samples[i].first == samples[i - 1].first)
      throw InvalidArgument("pl_interpolate: duplicate knot at " + std::to_string(samples[i].first));
    t.push_back(samples[i].first);
    v.push_back(samples[i].second);
  }
  return Pl1D(std::move(t), std::move(v));
}

namespace {

void require_odd_knots(std::size_t k) {
  if (k < 3 || k % 2 == 0)
    throw InvalidArgument("gadget knot count must be odd and >= 3 so that 0 is a knot, got " +
                          std::to_string(k));
}

// Hinge weights of the interpolant of t^2 on the half grid {j*eta}: the
// function is a0*|t| + sum_j a_j*(relu(t - j*eta) + relu(-t - j*eta)).
double hinge_weight(std::size_t j, double eta) { return j == 0 ? eta : 2.0 * eta; }

}  // namespace

Gadget square_gadget(double bound, std::size_t knot_count) {
  if (!(bound > 0.0) || !std::isfinite(bound)) throw InvalidArgument("square_gadget: bound must be > 0");
  require_odd_knots(knot_count);
  const std::size_t half = (knot_count - 1) / 2;
  const double eta = 2.0 * bound / static_cast<double>(knot_count - 1);
  const std::size_t h = 2 * half;
  TwoLayerNet net{Matrix(h, 1), Vector(h, 0.0), Matrix(1, h), Vector{0.0}};
  for (std::size_t j = 0; j < half; ++j) {
    const double tj = static_cast<double>(j) * eta;
    const double a = hinge_weight(j, eta);
    net.w1(2 * j, 0) = 1.0;
    net.w1(2 * j + 1, 0) = -1.0;
    net.b1[2 * j] = -tj;
    net.b1[2 * j + 1] = -tj;
    net.w2(0, 2 * j) = a;
    net.w2(0, 2 * j + 1) = a;
  }
  return Gadget{std::move(net), eta * eta / 4.0, eta, knot_count};
}

Gadget product_gadget(double bound_x, double bound_y, std::size_t knot_count) {
  if (!(bound_x > 0.0) || !(bound_y > 0.0) || !std::isfinite(bound_x) || !std::isfinite(bound_y))
    throw InvalidArgument("product_gadget: bounds must be > 0");
  require_odd_knots(knot_count);
  const double g = bound_x == bound_y ? bound_x : std::sqrt(bound_x * bound_y);
  const double alpha = bound_x == bound_y ? 1.0 : std::sqrt(bound_y / bound_x);
  const double beta = bound_x == bound_y ? 1.0 : 1.0 / alpha;
  const std::size_t half = (knot_count - 1) / 2;
  const double eta = 4.0 * g / static_cast<double>(knot_count - 1);

  // Per knot: relu(s - t), relu(-s - t), relu(d - t), relu(-d - t) with
  // s = a x + y / a and d = a x - y / a. At most one unit of each pair is
  // active, which keeps P(0, y) = 0 and P(x, y) = P(y, x) exact.
  const std::size_t h = 4 * half;
  TwoLayerNet net{Matrix(h, 2), Vector(h, 0.0), Matrix(1, h), Vector{0.0}};
  const double rows[4][2] = {{alpha, beta}, {-alpha, -beta}, {alpha, -beta}, {-alpha, beta}};
  for (std::size_t j = 0; j < half; ++j) {
    const double tj = static_cast<double>(j) * eta;
    const double a = hinge_weight(j, eta) / 4.0;
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t u = 4 * j + q;
      net.w1(u, 0) = rows[q][0];
      net.w1(u, 1) = rows[q][1];
      net.b1[u] = -tj;
      net.w2(0, u) = q < 2 ? a : -a;
    }
  }
  return Gadget{std::move(net), eta * eta / 8.0, eta, knot_count};
}

Gadget product_gadget(double bound, std::size_t knot_count) {
  return product_gadget(bound, bound, knot_count);
}

std::size_t product_knots_for(double bound_x, double bound_y, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("product_knots_for: tolerance must be > 0");
  const double g = std::sqrt(bound_x * bound_y);
  double segments = std::ceil(4.0 * g / std::sqrt(8.0 * eps));
  if (!std::isfinite(segments) || segments > 1e8)
    throw InvalidArgument("product_knots_for: knot count overflow");
  auto k = static_cast<std::size_t>(std::max(segments, 2.0));
  if (k % 2 == 1) ++k;
  for (;;) {
    const double eta = 4.0 * g / static_cast<double>(k);
    if (eta * eta / 8.0 <= eps) break;
    k += 2;
  }
  return k + 1;
}

TwoLayerNet stack_parallel(std::span<const TwoLayerNet> nets) {
  if (nets.empty()) throw InvalidArgument("stack_parallel: no nets");
  const std::size_t m = nets.front().input_dim();
  std::size_t h = 0, n = 0;
  for (const auto& net : nets) {
    net.validate();
    if (net.input_dim() != m) throw InvalidArgument("stack_parallel: input dimensions differ");
    h += net.hidden_width();
    n += net.output_dim();
  }
  TwoLayerNet out{Matrix(h, m), Vector(h, 0.0), Matrix(n, h), Vector(n, 0.0)};
  std::size_t ho = 0, no = 0;
  for (const auto& net : nets) {
    for (std::size_t j = 0; j < net.hidden_width(); ++j) {
      for (std::size_t k = 0; k < m; ++k) out.w1(ho + j, k) = net.w1(j, k);
      out.b1[ho + j] = net.b1[j];
      for (std::size_t o = 0; o < net.output_dim(); ++o) out.w2(no + o, ho + j) = net.w2(o, j);
    }
    for (std::size_t o = 0; o < net.output_dim(); ++o) out.b2[no + o] = net.b2[o];
    ho += net.hidden_width();
    no += net.output_dim();
  }
  return out;
}

}  // namespace promptvm
