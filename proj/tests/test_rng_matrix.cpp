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

#include <cmath>

#include "doctest.h"
#include "lqsgd/matrix.hpp"

using namespace lqsgd;

TEST_CASE("seeded rng is bitwise reproducible") {
  SeededRng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  SeededRng c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 16 && !differ; ++i) differ = c.next_u64() != d.next_u64();
  CHECK(differ);
}

TEST_CASE("gaussian matrix determinism and moments") {
  SeededRng r1(7), r2(7);
  Matrix m1 = gaussian_matrix(r1, 10, 10);
  Matrix m2 = gaussian_matrix(r2, 10, 10);
  CHECK(m1 == m2);

  SeededRng r3(8);
  Matrix m3 = gaussian_matrix(r3, 10, 10);
  CHECK_FALSE(m1 == m3);

  // Moment check over 1e5 samples.
  SeededRng r(12345);
  const std::size_t n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, purpose_tag("a")) != derive_seed(1, purpose_tag("b")));
  CHECK(derive_seed(1, purpose_tag("a"), 0) != derive_seed(1, purpose_tag("a"), 1));
  CHECK(derive_seed(1, purpose_tag("a")) == derive_seed(1, purpose_tag("a")));
}

TEST_CASE("matmul basics") {
  Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
  CHECK(matmul(eye, b) == b);

  Matrix row = Matrix::from_rows({{1, 2}});
  Matrix col = Matrix::from_rows({{3}, {4}});
  Matrix prod = matmul(row, col);
  CHECK(prod.rows() == 1);
  CHECK(prod.cols() == 1);
  CHECK(prod(0, 0) == doctest::Approx(11.0).epsilon(1e-15));

  CHECK_THROWS_AS(matmul(row, row), ShapeError);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  SeededRng rng(99);
  Matrix a = gaussian_matrix(rng, 7, 5);
  Matrix b = gaussian_matrix(rng, 5, 3);
  Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 5; ++k) expect += a(i, k) * b(k, j);
      CHECK(std::fabs(c(i, j) - expect) <= 1e-12);
    }
  }
}

TEST_CASE("matmul associativity within tolerance") {
  SeededRng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    Matrix a = gaussian_matrix(rng, 16, 64);
    Matrix b = gaussian_matrix(rng, 64, 32);
    Matrix c = gaussian_matrix(rng, 32, 8);
    Matrix left = matmul(matmul(a, b), c);
    Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      double denom = std::max(1.0, std::fabs(left.data()[i]));
      CHECK(std::fabs(left.data()[i] - right.data()[i]) / denom <= 1e-9);
    }
  }
}

TEST_CASE("transpose") {
  Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  Matrix t = transpose(a);
  CHECK(t == Matrix::from_rows({{1, 3}, {2, 4}}));
  SeededRng rng(3);
  Matrix r = gaussian_matrix(rng, 4, 9);
  CHECK(transpose(transpose(r)) == r);
  Matrix rowvec = Matrix::from_rows({{1, 2, 3}});
  Matrix colvec = transpose(rowvec);
  CHECK(colvec.rows() == 3);
  CHECK(colvec.cols() == 1);
}

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Matrix(3, 4)) == 0.0);
  CHECK(frobenius_norm(Matrix::from_rows({{3, 4}})) == doctest::Approx(5.0).epsilon(1e-15));
  SeededRng rng(11);
  Matrix r = gaussian_matrix(rng, 6, 6);
  double expect = 0.0;
  for (double v : r.data()) expect += v * v;
  expect = std::sqrt(expect);
  CHECK(std::fabs(frobenius_norm(r) - expect) <= 1e-12);
}

TEST_CASE("orthonormalize single column") {
  Matrix p = Matrix::from_rows({{3}, {4}});
  Matrix q = orthonormalize(p);
  CHECK(q(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(q(1, 0) == doctest::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("orthonormalize is idempotent on orthonormal input") {
  SeededRng rng(21);
  Matrix q = orthonormalize(gaussian_matrix(rng, 8, 3));
  Matrix q2 = orthonormalize(q);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(std::fabs(q.data()[i] - q2.data()[i]) <= 1e-12);
  }
}

TEST_CASE("orthonormalize gram matrix is the identity") {
  SeededRng rng(22);
  Matrix q = orthonormalize(gaussian_matrix(rng, 6, 2));
  Matrix gram = matmul(transpose(q), q);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-10);
    }
  }
}

TEST_CASE("orthonormalize handles degenerate columns") {
  // Second column is a multiple of the first; output must stay full rank.
  Matrix p = Matrix::from_rows({{1, 2}, {0, 0}, {0, 0}, {0, 0}});
  Matrix q = orthonormalize(p);
  Matrix gram = matmul(transpose(q), q);
  CHECK(std::fabs(gram(0, 0) - 1.0) <= 1e-12);
  CHECK(std::fabs(gram(1, 1) - 1.0) <= 1e-12);
  CHECK(std::fabs(gram(0, 1)) <= 1e-12);

  Matrix zero(5, 2);
  Matrix qz = orthonormalize(zero);
  Matrix gz = matmul(transpose(qz), qz);
  CHECK(std::fabs(gz(0, 0) - 1.0) <= 1e-12);
  CHECK(std::fabs(gz(1, 1) - 1.0) <= 1e-12);
  CHECK(std::fabs(gz(0, 1)) <= 1e-12);

  CHECK_THROWS_AS(orthonormalize(Matrix(2, 3)), ShapeError);
}

TEST_CASE("check_finite flags bad data") {
  Matrix m(2, 2);
  m(1, 1) = std::nan("");
  CHECK_THROWS_AS(check_finite(m, "test"), DataError);
}
