// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "promptvm/linalg.hpp"

namespace promptvm {

/// Continuous piecewise-linear function of one variable, extended linearly
/// beyond the end knots.
class Pl1D {
 public:
  Pl1D(Vector knots, Vector values);

  const Vector& knots() const { return knots_; }
  const Vector& values() const { return values_; }
  std::size_t size() const { return knots_.size(); }

  // Slope of segment k, between knots k and k+1.
  double slope(std::size_t k) const;

  double operator()(double t) const;

 private:
  Vector knots_;
  Vector values_;
};

/// w2 * relu(w1 * u + b1) + b2.
struct TwoLayerNet {
  Matrix w1;  // h x m
  Vector b1;
  Matrix w2;  // n x h
  Vector b2;

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_width() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.rows(); }

  void validate() const;
  Vector operator()(std::span<const double> u) const;
};

struct Gadget {
  TwoLayerNet net;
  double error_bound = 0.0;  // analytic sup error on the promised box
  double knot_spacing = 0.0;
  std::size_t knot_count = 0;
};

TwoLayerNet exact_affine(const Matrix& u, const Vector& c);

TwoLayerNet pl_to_relu(const Pl1D& pl);

Pl1D pl_interpolate(std::span<const std::pair<double, double>> samples);

// t^2 on [-B, B] with K uniform knots; K must be odd so that 0 is a knot.
Gadget square_gadget(double bound, std::size_t knot_count);

// x*y on [-B, B]^2 by polarization over square gadgets on [-2B, 2B].
Gadget product_gadget(double bound, std::size_t knot_count);

// x*y on [-Bx, Bx] x [-By, By]. The inputs are rescaled to a common box of
// half-width sqrt(Bx*By) in the first layer.
Gadget product_gadget(double bound_x, double bound_y, std::size_t knot_count);

// Smallest odd knot count whose product-gadget bound on [-Bx,Bx]x[-By,By] is <= eps.
std::size_t product_knots_for(double bound_x, double bound_y, double eps);

TwoLayerNet stack_parallel(std::span<const TwoLayerNet> nets);

}  // namespace promptvm
