#pragma once

#include <algorithm>
#include <cmath>

#include "spg/tensor.hpp"

namespace spg {

/// Plain (gradient-free) kernels shared by the tape forwards and the
/// inference paths. All matrices are row-major rank-2 tensors.

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul requires rank-2 operands, got " + a.shape_string() + " and " +
                         b.shape_string());
  }
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner extents disagree: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = pa[i * kk + k];
      if (aik == 0.0) continue;
      const double* brow = pb + k * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// a (m x k) times b^T where b is (n x k); result m x n.
inline Tensor matmul_nt_plain(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul_nt requires rank-2 operands");
  }
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt shared extents disagree: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  const std::size_t m = a.rows(), kk = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data().data() + i * kk;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data().data() + j * kk;
      double s = 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += arow[k] * brow[k];
      c.at(i, j) = s;
    }
  }
  return c;
}

inline void add_row_inplace(Tensor& m, const Tensor& row) {
  const std::size_t cols = m.cols();
  if (row.numel() != cols) {
    throw DimensionError("row extent " + row.shape_string() + " does not match matrix " +
                         m.shape_string());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) m.at(i, j) += row[j];
  }
}

inline void tanh_inplace(Tensor& t) {
  for (auto& x : t.data()) x = std::tanh(x);
}

inline void relu_inplace(Tensor& t) {
  for (auto& x : t.data()) x = x > 0.0 ? x : 0.0;
}

inline void l2_normalize_rows_inplace(Tensor& m, double eps = 1e-12) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j) * m.at(i, j);
    const double norm = std::sqrt(s);
    if (norm <= eps) {
      throw DegenerateInputError("cannot normalize a row with near-zero norm");
    }
    for (std::size_t j = 0; j < m.cols(); ++j) m.at(i, j) /= norm;
  }
}

/// Numerically stable softmax of a logit row; max is subtracted before exp.
inline std::vector<double> softmax_stable(const double* logits, std::size_t n) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

/// log(sum(exp(logits))) with max-subtraction.
inline double log_sum_exp(const double* logits, std::size_t n) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  return mx + std::log(z);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace spg
