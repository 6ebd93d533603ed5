// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "promptvm/error.hpp"

namespace promptvm {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> entries) {
  if (cols > std::numeric_limits<std::uint32_t>::max())
    throw InvalidArgument("sparse matrix: too many columns");
  for (const auto& e : entries) {
    if (e.row >= rows || e.col >= cols)
      throw InvalidArgument("sparse matrix: entry (" + std::to_string(e.row) + ", " +
                            std::to_string(e.col) + ") outside " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    if (!std::isfinite(e.value)) throw InvalidArgument("sparse matrix: non-finite entry");
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });

  SparseMatrix m(rows, cols);
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].row == entries[i].row && entries[j].col == entries[i].col) {
      sum += entries[j].value;
      ++j;
    }
    if (sum != 0.0) {
      m.col_idx_.push_back(static_cast<std::uint32_t>(entries[i].col));
      m.values_.push_back(sum);
      ++m.row_ptr_[entries[i].row + 1];
    }
    i = j;
  }
  std::partial_sum(m.row_ptr_.begin(), m.row_ptr_.end(), m.row_ptr_.begin());
  return m;
}

SparseMatrix SparseMatrix::from_dense(const Matrix& d) {
  std::vector<Triplet> entries;
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (std::size_t c = 0; c < d.cols(); ++c)
      if (d(r, c) != 0.0) entries.push_back({r, c, d(r, c)});
  return from_triplets(d.rows(), d.cols(), std::move(entries));
}

Matrix SparseMatrix::to_dense() const {
  Matrix d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    auto cs = row_cols(r);
    auto vs = row_values(r);
    for (std::size_t k = 0; k < cs.size(); ++k) d(r, cs[k]) = vs[k];
  }
  return d;
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    auto cs = row_cols(r);
    auto vs = row_values(r);
    for (std::size_t k = 0; k < cs.size(); ++k) out.push_back({r, cs[k], vs[k]});
  }
  return out;
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  auto cs = row_cols(r);
  auto it = std::lower_bound(cs.begin(), cs.end(), static_cast<std::uint32_t>(c));
  if (it == cs.end() || *it != c) return 0.0;
  return row_values(r)[static_cast<std::size_t>(it - cs.begin())];
}

std::vector<bool> SparseMatrix::nonzero_rows() const {
  std::vector<bool> out(rows_, false);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = row_ptr_[r + 1] > row_ptr_[r];
  return out;
}

std::vector<bool> SparseMatrix::nonzero_cols() const {
  std::vector<bool> out(cols_, false);
  for (auto c : col_idx_) out[c] = true;
  return out;
}

void accumulate_row_product(std::span<const double> a, const SparseMatrix& w, std::span<double> out) {
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const double ak = a[k];
    if (ak == 0.0) continue;
    auto cs = w.row_cols(k);
    auto vs = w.row_values(k);
    for (std::size_t i = 0; i < cs.size(); ++i) out[cs[i]] += ak * vs[i];
  }
}

Vector multiply(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw InvalidArgument("multiply: dimension mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vector multiply(const SparseMatrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw InvalidArgument("multiply: dimension mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    auto cs = m.row_cols(r);
    auto vs = m.row_values(r);
    for (std::size_t k = 0; k < cs.size(); ++k) s += vs[k] * x[cs[k]];
    y[r] = s;
  }
  return y;
}

double norm_inf(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double norm_1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double max_abs(const Matrix& m) { return norm_inf(m.data()); }

}  // namespace promptvm
