#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <vector>

#include "vqarank/errors.hpp"

namespace vqarank {

// Dense row-major matrix, 64-bit values. Plain value type; every model in the
// repo is built out of these.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows * cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> vals) {
    Matrix m(vals.size(), vals.size() ? vals.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& row : vals) {
      if (row.size() != m.cols) throw ShapeError("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix column_vector(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    m.data = v;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return rows * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { data.assign(data.size(), v); }
};

inline std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows << "x" << m.cols;
  return os.str();
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator+");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator-");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data) v *= s;
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

// every column of a multiplied elementwise by the single-column b
inline Matrix hadamard_col_broadcast(const Matrix& a, const Matrix& b) {
  if (b.cols != 1 || b.rows != a.rows)
    throw ShapeError("hadamard_col_broadcast: column " + shape_str(b) + " does not match " +
                     shape_str(a));
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) *= b(i, 0);
  return out;
}

// b (rows x 1) added to every column of a
inline Matrix add_col_broadcast(const Matrix& a, const Matrix& b) {
  if (b.cols != 1 || b.rows != a.rows)
    throw ShapeError("add_col_broadcast: bias " + shape_str(b) + " does not match " + shape_str(a));
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) += b(i, 0);
  return out;
}

inline Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows, 1);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j);
    out(i, 0) = s;
  }
  return out;
}

inline double dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double l2_norm(const Matrix& m) { return std::sqrt(dot(m, m)); }

inline Matrix column(const Matrix& m, std::size_t j) {
  if (j >= m.cols) throw ShapeError("column: index " + std::to_string(j) + " out of " + shape_str(m));
  Matrix out(m.rows, 1);
  for (std::size_t i = 0; i < m.rows; ++i) out(i, 0) = m(i, j);
  return out;
}

// Gathers rows of a feature table (items x dim) into a dim x k batch, one
// column per requested item.
inline Matrix rows_as_columns(const Matrix& table, const std::vector<std::size_t>& row_ids) {
  Matrix out(table.cols, row_ids.size());
  for (std::size_t j = 0; j < row_ids.size(); ++j) {
    const std::size_t r = row_ids[j];
    if (r >= table.rows)
      throw ShapeError("rows_as_columns: row " + std::to_string(r) + " out of " + shape_str(table));
    for (std::size_t i = 0; i < table.cols; ++i) out(i, j) = table(r, i);
  }
  return out;
}

inline Matrix row_as_column(const Matrix& table, std::size_t row_id) {
  return rows_as_columns(table, {row_id});
}

inline void require_finite(const Matrix& m, const char* ctx) {
  if (!m.all_finite()) throw DataError(std::string(ctx) + ": non-finite values");
}

}  // namespace vqarank
