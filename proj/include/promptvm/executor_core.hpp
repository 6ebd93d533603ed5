// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "promptvm/linalg.hpp"

namespace promptvm {

/// Token state of one forward pass: L prompt rows, then the input, work and
/// output tokens.
class TokenMatrix {
 public:
  TokenMatrix() = default;
  TokenMatrix(std::size_t prompt_len, std::size_t width);
  TokenMatrix(std::size_t prompt_len, Matrix state);

  std::size_t prompt_len() const { return prompt_len_; }
  std::size_t rows() const { return state_.rows(); }
  std::size_t width() const { return state_.cols(); }

  std::size_t input_row() const { return prompt_len_; }
  std::size_t work_row() const { return prompt_len_ + 1; }
  std::size_t output_row() const { return prompt_len_ + 2; }

  Matrix& state() { return state_; }
  const Matrix& state() const { return state_; }
  std::span<double> row(std::size_t i) { return state_.row(i); }
  std::span<const double> row(std::size_t i) const { return state_.row(i); }

  bool operator==(const TokenMatrix& other) const = default;

 private:
  std::size_t prompt_len_ = 0;
  Matrix state_;
};

struct BlockWeights {
  SparseMatrix wq, wk, wv;  // D x D
  SparseMatrix ffn_w1;      // h x D
  Vector ffn_b1;            // h
  SparseMatrix ffn_w2;      // D x h
  Vector ffn_b2;            // D

  std::size_t hidden_width() const { return ffn_w1.rows(); }
  void validate(std::size_t width) const;

  static BlockWeights zero(std::size_t width);

  bool operator==(const BlockWeights& other) const = default;
};

/// The fixed executor. Validated on construction and immutable afterwards.
class ExecutorParams {
 public:
  struct Fields {
    std::vector<BlockWeights> blocks;
    Matrix input_embed;  // D x d
    Vector input_bias;   // D
    Vector initial_output;
    Vector initial_work;
    Vector readout;
    double readout_bias = 0.0;
    double temperature = 1.0;
    std::size_t model_width = 0;
    std::size_t prompt_len = 0;
    double domain_radius = 1.0;  // inputs must satisfy |x_i| <= domain_radius
  };

  explicit ExecutorParams(Fields fields);

  const Fields& fields() const { return f_; }
  const std::vector<BlockWeights>& blocks() const { return f_.blocks; }
  std::size_t num_blocks() const { return f_.blocks.size(); }
  std::size_t model_width() const { return f_.model_width; }
  std::size_t prompt_len() const { return f_.prompt_len; }
  std::size_t input_dim() const { return f_.input_embed.cols(); }
  double temperature() const { return f_.temperature; }
  double domain_radius() const { return f_.domain_radius; }
  const Vector& readout() const { return f_.readout; }
  double readout_bias() const { return f_.readout_bias; }

  bool operator==(const ExecutorParams& other) const;

 private:
  Fields f_;
};

/// States after every half step plus the attention matrices, for instrumentation.
struct ExecutionTrace {
  std::vector<Matrix> after_attention;  // one per block
  std::vector<Matrix> after_ffn;        // one per block
  std::vector<Matrix> attention;        // n x n weights, one per block
  TokenMatrix initial;
};

Vector softmax_tau(std::span<const double> scores, double tau);

Matrix attention_step(const TokenMatrix& z, const BlockWeights& w, double tau,
                      Matrix* weights = nullptr);
Matrix ffn_step(const TokenMatrix& z, const BlockWeights& w);

TokenMatrix initial_state(const ExecutorParams& params, const Matrix& prompt,
                          std::span<const double> x);

// Reference evaluation that follows the layer definitions literally.
TokenMatrix run_executor(const ExecutorParams& params, const Matrix& prompt,
                         std::span<const double> x, ExecutionTrace* trace = nullptr);

double readout_scalar(const ExecutorParams& params, const TokenMatrix& final_state);

/// Evaluation engine for bulk use. FFN hidden units that share a first-layer
/// row are evaluated together by prefix sums over their sorted biases, which
/// equals the reference result up to summation order.
class Executor {
 public:
  explicit Executor(std::shared_ptr<const ExecutorParams> params);
  ~Executor();
  Executor(Executor&&) noexcept;
  Executor& operator=(Executor&&) noexcept;

  const ExecutorParams& params() const { return *params_; }

  TokenMatrix run(const Matrix& prompt, std::span<const double> x,
                  ExecutionTrace* trace = nullptr) const;
  double evaluate(const Matrix& prompt, std::span<const double> x) const;

 private:
  struct Compiled;
  std::shared_ptr<const ExecutorParams> params_;
  std::unique_ptr<Compiled> compiled_;
};

}  // namespace promptvm
