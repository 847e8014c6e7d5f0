#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace land {

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  bool operator==(const Matrix&) const = default;

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);
};

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

struct EigenResult {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column j is the eigenvector of values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// Rejects inputs asymmetric beyond 1e-9 (relative to max |a_ij|).
EigenResult sym_eig(const Matrix& a, int max_sweeps = 100, double tol = 1e-12);

// Symmetric PSD square root via sym_eig. Eigenvalues down to
// -1e-10 * max|lambda| are clamped to zero; anything more negative is
// rejected with the offending eigenvalue in the message.
Matrix psd_sqrt(const Matrix& a);

}  // namespace land
