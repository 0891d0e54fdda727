// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include "lqsgd/matrix.hpp"

#include <cmath>
#include <string>

namespace lqsgd {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != m.cols_) throw ShapeError("ragged initializer rows");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) throw ShapeError("matrix += shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other)) throw ShapeError("matrix -= shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) {
        c(i, j) += aik * b(k, j);
      }
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

double frobenius_norm(const Matrix& a) {
  double sum = 0.0;
  for (double v : a.data()) sum += v * v;
  return std::sqrt(sum);
}

namespace {

constexpr double kDegenerateNorm = 1e-12;

// Subtracts the projections of column j onto the already-orthonormal
// columns [0, j). One pass of classical MGS update.
void project_out(Matrix& q, std::size_t j) {
  for (std::size_t i = 0; i < j; ++i) {
    double dot = 0.0;
    for (std::size_t r = 0; r < q.rows(); ++r) dot += q(r, i) * q(r, j);
    for (std::size_t r = 0; r < q.rows(); ++r) q(r, j) -= dot * q(r, i);
  }
}

double column_norm(const Matrix& q, std::size_t j) {
  double sum = 0.0;
  for (std::size_t r = 0; r < q.rows(); ++r) sum += q(r, j) * q(r, j);
  return std::sqrt(sum);
}

}  // namespace

Matrix orthonormalize(const Matrix& p) {
  if (p.rows() < p.cols()) {
    throw ShapeError("orthonormalize expects a tall matrix, got " +
                     std::to_string(p.rows()) + "x" + std::to_string(p.cols()));
  }
  Matrix q = p;
  std::size_t next_canonical = 0;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    project_out(q, j);
    project_out(q, j);  // re-orthogonalization pass
    double norm = column_norm(q, j);
    while (norm < kDegenerateNorm && next_canonical < q.rows()) {
      // Degenerate direction: substitute the next canonical basis vector.
      for (std::size_t r = 0; r < q.rows(); ++r) q(r, j) = 0.0;
      q(next_canonical++, j) = 1.0;
      project_out(q, j);
      project_out(q, j);
      norm = column_norm(q, j);
    }
    for (std::size_t r = 0; r < q.rows(); ++r) q(r, j) /= norm;
  }
  return q;
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw DataError(std::string(what) + ": non-finite entries");
}

}  // namespace lqsgd
