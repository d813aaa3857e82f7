#pragma once

#include <cstddef>
#include <vector>

#include "tssl/common.hpp"

namespace tssl {

/// Dense row-major matrix of doubles. All internal accumulation is 64-bit;
/// checkpoints narrow to 32-bit on write.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, rows * cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  double* row_ptr(std::size_t r) { return values.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return values.data() + r * cols; }

  std::size_t size() const { return values.size(); }
  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

/// a(r×k) · b(k×c)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a(r×k) · b(c×k)ᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a(k×r)ᵀ · b(k×c)
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

/// True if every entry is finite.
bool all_finite(const Matrix& a);

/// Throws a dimension error naming both shapes unless a and b agree.
void require_same_shape(const Matrix& a, const Matrix& b, const char* where);

}  // namespace tssl
