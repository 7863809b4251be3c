// Copyright 2026 The rankshrink Authors
//
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

#include <doctest.h>

#include <random>

#include "rankshrink/linalg.hpp"

using rankshrink::MatrixXd;
using rankshrink::VectorXd;

namespace {

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

MatrixXd triple_loop(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd c = MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// Eigenvalues of a symmetric PSD matrix by orthogonal (block power) iteration,
// returned in descending order. Independent of the Jacobi code under test.
VectorXd power_eigenvalues(const Eigen::MatrixXd& gram) {
  const Eigen::Index n = gram.rows();
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
  VectorXd ritz = VectorXd::Zero(n);
  for (int iter = 0; iter < 200000; ++iter) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gram * q);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    VectorXd next = (q.transpose() * gram * q).diagonal();
    const double change = (next - ritz).cwiseAbs().maxCoeff();
    ritz = next;
    if (iter > 10 && change < 1e-13 * ritz.cwiseAbs().maxCoeff()) break;
  }
  std::sort(ritz.data(), ritz.data() + n, std::greater<double>());
  return ritz;
}

double max_orthogonality_error(const MatrixXd& cols_orthonormal) {
  const MatrixXd gram = cols_orthonormal.transpose() * cols_orthonormal;
  return (gram - MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("matmul: identity, permutation, triple-loop oracle") {
  MatrixXd a(3, 3);
  a << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  CHECK(rankshrink::matmul(MatrixXd::Identity(3, 3), a) == a);

  MatrixXd x(2, 2), p(2, 2), expected(2, 2);
  x << 1, 2, 3, 4;
  p << 0, 1, 1, 0;
  expected << 2, 1, 4, 3;
  CHECK(rankshrink::matmul(x, p) == expected);

  std::mt19937_64 rng(7);
  const MatrixXd l = random_matrix(7, 5, rng);
  const MatrixXd r = random_matrix(5, 3, rng);
  const MatrixXd got = rankshrink::matmul(l, r);
  CHECK(got.rows() == 7);
  CHECK(got.cols() == 3);
  CHECK((got - triple_loop(l, r)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(rankshrink::matmul(MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 3)), rankshrink::InvalidInput);
}

TEST_CASE("svd of identity and diagonal matrices") {
  auto eye = rankshrink::svd(MatrixXd::Identity(4, 4));
  CHECK(eye.sigma == VectorXd::Ones(4));

  MatrixXd d = MatrixXd::Zero(3, 3);
  d.diagonal() << 1, 3, 2;
  auto f = rankshrink::svd(d);
  CHECK(f.sigma(0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(f.sigma(1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(f.sigma(2) == doctest::Approx(1.0).epsilon(1e-15));
  // Signed permutations: each row/column has exactly one +-1.
  for (const MatrixXd* m : {&f.u, &f.vt}) {
    CHECK((m->cwiseAbs().rowwise().sum() - VectorXd::Ones(3)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((m->cwiseAbs().colwise().sum() - VectorXd::Ones(3).transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((m->cwiseAbs().array() == 1.0).count() == 3);
  }
  // Sign convention: largest |entry| of each u column is non-negative.
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(f.u.col(j).maxCoeff() == 1.0);
}

TEST_CASE("svd of random 50x80 matches eigenvalues of W W^T") {
  std::mt19937_64 rng(50);
  const MatrixXd w = random_matrix(50, 80, rng);
  const auto f = rankshrink::svd(w);
  REQUIRE(f.sigma.size() == 50);
  CHECK(f.u.rows() == 50);
  CHECK(f.vt.cols() == 80);
  CHECK((w - f.reconstruct()).norm() / w.norm() < 1e-8);
  CHECK(max_orthogonality_error(f.u) < 1e-9);
  CHECK(max_orthogonality_error(f.vt.transpose()) < 1e-9);

  const VectorXd eig = power_eigenvalues(Eigen::MatrixXd(w * w.transpose()));
  for (Eigen::Index i = 0; i < 50; ++i) {
    CHECK(std::abs(std::sqrt(std::max(eig(i), 0.0)) - f.sigma(i)) < 1e-6);
  }
}

TEST_CASE("svd is deterministic and sorted") {
  std::mt19937_64 rng(3);
  const MatrixXd w = random_matrix(17, 9, rng);
  const auto a = rankshrink::svd(w);
  const auto b = rankshrink::svd(w);
  CHECK(a.u == b.u);
  CHECK(a.sigma == b.sigma);
  CHECK(a.vt == b.vt);
  for (Eigen::Index i = 1; i < a.sigma.size(); ++i) CHECK(a.sigma(i) <= a.sigma(i - 1));
  CHECK(a.sigma.minCoeff() >= 0.0);
}

TEST_CASE("svd of rank-deficient and zero matrices keeps orthonormal factors") {
  std::mt19937_64 rng(11);
  const MatrixXd low = random_matrix(10, 3, rng) * random_matrix(3, 8, rng);
  const auto f = rankshrink::svd(low);
  CHECK(f.sigma(3) == 0.0);
  CHECK(f.sigma(7) == 0.0);
  CHECK(max_orthogonality_error(f.u) < 1e-9);
  CHECK(max_orthogonality_error(f.vt.transpose()) < 1e-9);
  CHECK((low - f.reconstruct()).norm() / low.norm() < 1e-8);

  const auto z = rankshrink::svd(MatrixXd::Zero(4, 6));
  CHECK(z.sigma == VectorXd::Zero(4));
  CHECK(max_orthogonality_error(z.u) < 1e-12);
  CHECK(max_orthogonality_error(z.vt.transpose()) < 1e-12);

  const auto one = rankshrink::svd(MatrixXd::Constant(1, 1, -2.5));
  CHECK(one.sigma(0) == 2.5);
  CHECK(one.u(0, 0) == 1.0);
  CHECK(one.vt(0, 0) == -1.0);
}

TEST_CASE("svd rejects non-finite and empty input") {
  MatrixXd w = MatrixXd::Ones(3, 3);
  w(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rankshrink::svd(w), rankshrink::InvalidInput);
  w(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rankshrink::svd(w), rankshrink::InvalidInput);
  CHECK_THROWS_AS(rankshrink::svd(MatrixXd(0, 3)), rankshrink::InvalidInput);
}

TEST_CASE("svd works for float scalars") {
  Eigen::Matrix<float, 3, 2> w;
  w << 1, 2, 3, 4, 5, 6;
  const auto f = rankshrink::svd(w);
  CHECK((w - f.reconstruct()).norm() / w.norm() < 1e-5f);
}

TEST_CASE("truncate: full rank, hand-computed diagonal, Eckart-Young tail") {
  std::mt19937_64 rng(10);
  const MatrixXd w = random_matrix(6, 4, rng);
  const auto f = rankshrink::svd(w);
  auto [a, b] = rankshrink::truncate(f, 4);
  CHECK((a * b - w).norm() / w.norm() < 1e-8);

  MatrixXd d = MatrixXd::Zero(3, 3);
  d.diagonal() << 3, 2, 1;
  auto [a1, b1] = rankshrink::truncate(rankshrink::svd(d), 1);
  MatrixXd expected = MatrixXd::Zero(3, 3);
  expected(0, 0) = 3;
  CHECK(a1.rows() == 3);
  CHECK(a1.cols() == 1);
  CHECK(b1.rows() == 1);
  CHECK((a1 * b1 - expected).cwiseAbs().maxCoeff() < 1e-10);

  const MatrixXd sq = random_matrix(10, 10, rng);
  const auto g = rankshrink::svd(sq);
  auto [a3, b3] = rankshrink::truncate(g, 3);
  const double tail = std::sqrt(g.sigma.tail(7).squaredNorm());
  CHECK(std::abs((sq - a3 * b3).norm() - tail) < 1e-8);
}

TEST_CASE("truncate rejects ranks out of range") {
  const auto f = rankshrink::svd(MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(rankshrink::truncate(f, 0), rankshrink::InvalidInput);
  CHECK_THROWS_AS(rankshrink::truncate(f, 4), rankshrink::InvalidInput);
}

TEST_CASE("property: random shapes satisfy reconstruction, orthogonality, tail identity") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 40);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = dim(rng), n = dim(rng);
    MatrixXd w = random_matrix(m, n, rng);
    if (trial % 5 == 0) w.col(0) *= 1e-7;  // poorly scaled column
    const auto f = rankshrink::svd(w);
    CHECK((w - f.reconstruct()).norm() / w.norm() < 1e-8);
    CHECK(max_orthogonality_error(f.u) < 1e-9);
    CHECK(max_orthogonality_error(f.vt.transpose()) < 1e-9);
    const int k = 1 + trial % static_cast<int>(f.sigma.size());
    auto [a, b] = rankshrink::truncate(f, k);
    const double err2 = (w - a * b).squaredNorm();
    const double tail2 = f.sigma.tail(f.sigma.size() - k).squaredNorm();
    CHECK(std::abs(err2 - tail2) <= 1e-6 * std::max(tail2, 1e-300) + 1e-20 * w.squaredNorm());
  }
}
