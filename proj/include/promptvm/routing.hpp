// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "promptvm/linalg.hpp"

namespace promptvm {

/// Unit-norm address keys. Label l is the index into the key list.
class KeyCodebook {
 public:
  explicit KeyCodebook(std::vector<Vector> keys);

  // e_0 ... e_{n-1} in R^n; separation 1.
  static KeyCodebook basis(std::size_t key_dim);

  std::size_t key_dim() const { return key_dim_; }
  std::size_t size() const { return keys_.size(); }
  const Vector& key(std::size_t label) const;
  double separation() const { return separation_; }
  bool is_basis() const;

 private:
  std::size_t key_dim_ = 0;
  std::vector<Vector> keys_;
  double separation_ = 1.0;
};

/// Evidence that one read concentrates on `target_slot`: effective (post
/// scaling) margin over `num_slots - 1` competitors at temperature tau, with
/// values bounded by `value_bound` in max norm.
struct MarginCertificate {
  std::size_t target_slot = 0;
  double raw_margin = 0.0;
  std::size_t num_slots = 0;
  double temperature = 1.0;
  double value_bound = 0.0;

  double impurity_bound() const;
  double copy_error_bound() const;
};

Vector slot_scores(std::span<const double> query, const Matrix& prompt, const SparseMatrix& wk,
                   double scaling);

// Scores use the 1/sqrt(D) convention of the executor's attention.
Vector prompt_read(std::span<const double> query, const Matrix& prompt, const SparseMatrix& wk,
                   const SparseMatrix& wv, double tau);

double margin_of(std::span<const double> scores, std::size_t target);

// Throws InvalidArgument when the target does not win by a positive margin.
MarginCertificate certify(std::span<const double> scores, std::size_t target, double tau,
                          double value_bound);

double impurity_upper_bound(const MarginCertificate& cert);
double readout_error_bound(const MarginCertificate& cert);
double temperature_for_impurity(double delta, std::size_t num_slots, double rho);

// Off-target attention mass sum_{j != target} alpha_j. Computed from score
// gaps so that it stays accurate when it is far below machine epsilon.
double off_target_mass(std::span<const double> scores, std::size_t target, double tau);

// max_c |sum_{j != target} w_j (v_jc - v_target,c)| for attention weights w
// and value rows v. This is the read error of exact arithmetic; it avoids the
// rounding floor of subtracting two nearly equal reads.
double copy_deviation(std::span<const double> weights, const Matrix& values, std::size_t target);

std::string certificate_csv_header();
std::string certificate_csv_row(const MarginCertificate& cert, double measured);

}  // namespace promptvm
