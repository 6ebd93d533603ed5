// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "promptvm/linalg.hpp"
#include "promptvm/relu_gadgets.hpp"

namespace promptvm {

struct MlpLayer {
  Matrix weights;  // out x in
  Vector bias;

  bool operator==(const MlpLayer& other) const = default;
};

/// ReLU network x -> W_S(... relu(W_1 x + b_1) ...) + b_S with scalar output.
/// Depth counts the input layer, so one hidden layer is depth 3.
class ReluMlp {
 public:
  // If `declared_bound` is given, every entry must satisfy |entry| <= bound.
  explicit ReluMlp(std::vector<MlpLayer> layers, std::optional<double> declared_bound = std::nullopt);

  const std::vector<MlpLayer>& layers() const { return layers_; }
  std::size_t depth() const { return layers_.size() + 1; }
  std::size_t input_dim() const { return layers_.front().weights.cols(); }
  std::size_t hidden_width() const;  // width of the first hidden layer
  double param_bound() const { return bound_; }
  double max_abs_entry() const { return max_entry_; }

  // Accessors for the one-hidden-layer form a^T relu(W x + b) + c.
  const Matrix& w() const;
  const Vector& b() const;
  double a(std::size_t r) const;
  double c() const;

  bool operator==(const ReluMlp& other) const {
    return layers_ == other.layers_ && bound_ == other.bound_;
  }

 private:
  std::vector<MlpLayer> layers_;
  double bound_ = 0.0;
  double max_entry_ = 0.0;
};

/// The class of networks one executor serves.
struct MlpShapeClass {
  std::size_t input_dim = 1;
  std::size_t hidden_width = 1;
  std::size_t depth = 3;
  double param_bound = 1.0;
  double domain_radius = 1.0;

  void validate() const;
  bool admits(const ReluMlp& mlp) const;
  bool operator==(const MlpShapeClass& other) const = default;
};

double mlp_forward(const ReluMlp& mlp, std::span<const double> x);

// One-hidden-layer network in d = 1 equal to pl on its knot span.
ReluMlp mlp_from_pl1d(const Pl1D& pl);

ReluMlp random_mlp(const MlpShapeClass& shape, std::uint64_t seed);

ReluMlp one_hidden_layer(const Matrix& w, const Vector& b, const Vector& a, double c,
                         std::optional<double> declared_bound = std::nullopt);

}  // namespace promptvm
