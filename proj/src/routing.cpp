// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/routing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "promptvm/error.hpp"
#include "promptvm/executor_core.hpp"

namespace promptvm {

KeyCodebook::KeyCodebook(std::vector<Vector> keys) : keys_(std::move(keys)) {
  if (keys_.empty()) throw InvalidArgument("codebook: no keys");
  key_dim_ = keys_.front().size();
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    const auto& k = keys_[i];
    if (k.size() != key_dim_) throw InvalidArgument("codebook: keys differ in dimension");
    double n2 = 0.0;
    for (double v : k) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-12)
      throw InvalidArgument("codebook: key " + std::to_string(i) + " is not unit norm");
  }
  double worst = -1.0;
  for (std::size_t i = 0; i < keys_.size(); ++i)
    for (std::size_t j = i + 1; j < keys_.size(); ++j) {
      double ip = 0.0;
      for (std::size_t c = 0; c < key_dim_; ++c) ip += keys_[i][c] * keys_[j][c];
      worst = std::max(worst, ip);
    }
  separation_ = keys_.size() == 1 ? 1.0 : 1.0 - std::max(worst, 0.0);
  if (!(separation_ > 0.0)) throw InvalidArgument("codebook: keys are not separated");
}

KeyCodebook KeyCodebook::basis(std::size_t key_dim) {
  std::vector<Vector> keys(key_dim, Vector(key_dim, 0.0));
  for (std::size_t i = 0; i < key_dim; ++i) keys[i][i] = 1.0;
  return KeyCodebook(std::move(keys));
}

const Vector& KeyCodebook::key(std::size_t label) const {
  if (label >= keys_.size()) throw InvalidArgument("codebook: unknown label " + std::to_string(label));
  return keys_[label];
}

bool KeyCodebook::is_basis() const {
  if (keys_.size() != key_dim_) return false;
  for (std::size_t i = 0; i < keys_.size(); ++i)
    for (std::size_t c = 0; c < key_dim_; ++c)
      if (keys_[i][c] != (i == c ? 1.0 : 0.0)) return false;
  return true;
}

double MarginCertificate::impurity_bound() const {
  return static_cast<double>(num_slots - 1) * std::exp(-raw_margin / temperature);
}

double MarginCertificate::copy_error_bound() const { return 2.0 * value_bound * impurity_bound(); }

Vector slot_scores(std::span<const double> query, const Matrix& prompt, const SparseMatrix& wk,
                   double scaling) {
  const std::size_t d = prompt.cols();
  if (query.size() != d || wk.rows() != d || wk.cols() != d)
    throw InvalidArgument("slot_scores: dimension mismatch");
  if (!(scaling > 0.0)) throw InvalidArgument("slot_scores: scaling must be > 0");
  Vector scores(prompt.rows(), 0.0);
  Vector key(d);
  for (std::size_t j = 0; j < prompt.rows(); ++j) {
    std::fill(key.begin(), key.end(), 0.0);
    accumulate_row_product(prompt.row(j), wk, key);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += query[c] * key[c];
    scores[j] = s / scaling;
  }
  return scores;
}

Vector prompt_read(std::span<const double> query, const Matrix& prompt, const SparseMatrix& wk,
                   const SparseMatrix& wv, double tau) {
  const std::size_t d = prompt.cols();
  if (wv.rows() != d || wv.cols() != d) throw InvalidArgument("prompt_read: dimension mismatch");
  if (prompt.rows() == 0) throw InvalidArgument("prompt_read: empty prompt");
  Vector w = softmax_tau(slot_scores(query, prompt, wk, std::sqrt(static_cast<double>(d))), tau);
  Vector value(d), out(d, 0.0);
  for (std::size_t j = 0; j < prompt.rows(); ++j) {
    std::fill(value.begin(), value.end(), 0.0);
    accumulate_row_product(prompt.row(j), wv, value);
    for (std::size_t c = 0; c < d; ++c) out[c] += w[j] * value[c];
  }
  return out;
}

double margin_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw InvalidArgument("margin_of: target out of range");
  if (scores.size() < 2) throw InvalidArgument("margin_of: need at least two slots");
  double best = -INFINITY;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != target) best = std::max(best, scores[j]);
  return scores[target] - best;
}

MarginCertificate certify(std::span<const double> scores, std::size_t target, double tau,
                          double value_bound) {
  if (!(tau > 0.0)) throw InvalidArgument("certify: tau must be > 0");
  if (!(value_bound >= 0.0)) throw InvalidArgument("certify: value bound must be >= 0");
  const double m = margin_of(scores, target);
  if (!(m > 0.0))
    throw InvalidArgument("certify: slot " + std::to_string(target) + " has no positive margin");
  return MarginCertificate{target, m, scores.size(), tau, value_bound};
}

double impurity_upper_bound(const MarginCertificate& cert) { return cert.impurity_bound(); }

double readout_error_bound(const MarginCertificate& cert) { return cert.copy_error_bound(); }

double temperature_for_impurity(double delta, std::size_t num_slots, double rho) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("temperature: delta must be > 0");
  if (num_slots < 2) throw InvalidArgument("temperature: need at least two slots");
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidArgument("temperature: rho must lie in (0, 1)");
  const double lg = std::log(static_cast<double>(num_slots - 1) / rho);
  return delta / lg;
}

double off_target_mass(std::span<const double> scores, std::size_t target, double tau) {
  if (target >= scores.size()) throw InvalidArgument("off_target_mass: target out of range");
  const double m = *std::max_element(scores.begin(), scores.end());
  double other = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != target) other += std::exp((scores[j] - m) / tau);
  const double self = std::exp((scores[target] - m) / tau);
  return other / (other + self);
}

double copy_deviation(std::span<const double> weights, const Matrix& values, std::size_t target) {
  if (weights.size() != values.rows() || target >= values.rows())
    throw InvalidArgument("copy_deviation: dimension mismatch");
  double worst = 0.0;
  for (std::size_t c = 0; c < values.cols(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < values.rows(); ++j)
      if (j != target) s += weights[j] * (values(j, c) - values(target, c));
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

std::string certificate_csv_header() { return "L,delta,tau,B,bound,measured"; }

std::string certificate_csv_row(const MarginCertificate& cert, double measured) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", cert.num_slots,
                cert.raw_margin, cert.temperature, cert.value_bound, cert.copy_error_bound(),
                measured);
  return buf;
}

}  // namespace promptvm
