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

#ifndef RANKSHRINK_LINALG_HPP
#define RANKSHRINK_LINALG_HPP

// Dense real matrices and a one-sided Jacobi SVD.
//
// Everything here is templated on the scalar type and accepts any Eigen
// expression, so callers can write svd(a * b.transpose()) without
// materializing intermediates by hand.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "rankshrink/errors.hpp"

namespace rankshrink {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// u * diag(sigma) * vt with u (m x r), sigma descending, vt (r x n).
template <typename Scalar>
struct SvdFactors {
  Matrix<Scalar> u;
  Vector<Scalar> sigma;
  Matrix<Scalar> vt;

  Eigen::Index rank_bound() const { return sigma.size(); }

  Matrix<Scalar> reconstruct() const { return u * sigma.asDiagonal() * vt; }
};

namespace linalg_detail {

template <typename Scalar>
struct SvdTuning {
  static constexpr int kMaxSweeps = 100;
  // Singular values below this fraction of the largest are treated as zero.
  static constexpr Scalar kClampRatio = Scalar(1e-12);
};

// Hestenes one-sided Jacobi on a tall (rows >= cols) column-major matrix.
// On return `work` holds U * Sigma column by column and `v` is orthogonal.
template <typename Scalar>
void jacobi_orthogonalize(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& work,
                          Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& v) {
  using std::abs;
  using std::sqrt;
  const Eigen::Index n = work.cols();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar tol = eps * sqrt(static_cast<Scalar>(std::max<Eigen::Index>(work.rows(), 1)));
  v.setIdentity(n, n);

  Scalar residual = 0;
  for (int sweep = 0; sweep < SvdTuning<Scalar>::kMaxSweeps; ++sweep) {
    bool rotated = false;
    residual = 0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = work.col(p).squaredNorm();
        const Scalar beta = work.col(q).squaredNorm();
        const Scalar gamma = work.col(p).dot(work.col(q));
        if (alpha == Scalar(0) || beta == Scalar(0)) continue;
        const Scalar scale = sqrt(alpha) * sqrt(beta);
        const Scalar cosine = abs(gamma) / scale;
        residual = std::max(residual, cosine);
        if (cosine <= tol) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= 0 ? Scalar(1) : Scalar(-1)) / (abs(zeta) + sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < work.rows(); ++i) {
          const Scalar ap = work(i, p), aq = work(i, q);
          work(i, p) = c * ap - s * aq;
          work(i, q) = s * ap + c * aq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const Scalar vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  std::ostringstream msg;
  msg << "svd: one-sided Jacobi did not converge in " << SvdTuning<Scalar>::kMaxSweeps
      << " sweeps (max normalized off-diagonal " << residual << ")";
  throw NumericalFailure(msg.str(), static_cast<double>(residual));
}

// Fills the listed columns of `basis` with unit vectors orthogonal to every
// column already marked filled. Deterministic: picks the coordinate axis
// with the largest orthogonal residual.
template <typename Scalar>
void complete_orthonormal(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& basis,
                          std::vector<bool>& filled) {
  const Eigen::Index m = basis.rows();
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    if (filled[j]) continue;
    Vector<Scalar> best;
    Scalar best_norm = -1;
    for (Eigen::Index axis = 0; axis < m; ++axis) {
      Vector<Scalar> cand = Vector<Scalar>::Unit(m, axis);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k = 0; k < basis.cols(); ++k) {
          if (filled[k]) cand -= basis.col(k).dot(cand) * basis.col(k);
        }
      }
      const Scalar norm = cand.norm();
      if (norm > best_norm) {
        best_norm = norm;
        best = std::move(cand);
      }
    }
    basis.col(j) = best / best_norm;
    filled[j] = true;
  }
}

// SVD of a tall matrix: returns (u_tall, sigma, v) with a = u_tall * diag(sigma) * v^T.
template <typename Scalar>
void tall_svd(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
              Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u_out, Vector<Scalar>& sigma_out,
              Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& v_out) {
  using ColMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  ColMajor work = a;
  ColMajor v;
  jacobi_orthogonalize(work, v);

  Vector<Scalar> norms(n);
  for (Eigen::Index j = 0; j < n; ++j) norms[j] = work.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms[x] > norms[y]; });

  const Scalar sigma_max = n > 0 ? norms[order[0]] : Scalar(0);
  const Scalar floor = sigma_max * SvdTuning<Scalar>::kClampRatio;
  u_out.resize(m, n);
  v_out.resize(n, n);
  sigma_out.resize(n);
  std::vector<bool> filled(static_cast<size_t>(n), false);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<size_t>(j)];
    v_out.col(j) = v.col(src);
    const Scalar s = norms[src];
    if (s > floor && s > Scalar(0)) {
      sigma_out[j] = s;
      u_out.col(j) = work.col(src) / s;
      filled[static_cast<size_t>(j)] = true;
    } else {
      sigma_out[j] = Scalar(0);
      u_out.col(j).setZero();
    }
  }
  complete_orthonormal(u_out, filled);
}

}  // namespace linalg_detail

/// Matrix product with an explicit shape check.
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dimensions differ (" << a.rows() << "x" << a.cols() << " times "
        << b.rows() << "x" << b.cols() << ")";
    throw InvalidInput(msg.str());
  }
  return a * b;
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// sigma has length min(rows, cols) and is non-increasing; values below
/// 1e-12 * sigma_max are clamped to zero and the matching singular vectors
/// are completed to an orthonormal set. Each column of u is signed so that its
/// largest-magnitude entry is non-negative, which makes the factorization
/// reproducible. Throws InvalidInput on empty or non-finite input and
/// NumericalFailure if the rotations do not converge within 100 sweeps.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  using ColMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (w.rows() < 1 || w.cols() < 1) throw InvalidInput("svd: matrix must be non-empty");
  if (!all_finite(w)) throw InvalidInput("svd: matrix has non-finite entries");

  SvdFactors<Scalar> out;
  ColMajor left, right;
  if (w.rows() >= w.cols()) {
    linalg_detail::tall_svd<Scalar>(ColMajor(w), left, out.sigma, right);
    out.u = left;
    out.vt = right.transpose();
  } else {
    // w^T = left * S * right^T  =>  w = right * S * left^T
    linalg_detail::tall_svd<Scalar>(ColMajor(w.transpose()), left, out.sigma, right);
    out.u = right;
    out.vt = left.transpose();
  }

  for (Eigen::Index j = 0; j < out.u.cols(); ++j) {
    Eigen::Index arg = 0;
    out.u.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.u(arg, j) < Scalar(0)) {
      out.u.col(j) = -out.u.col(j);
      out.vt.row(j) = -out.vt.row(j);
    }
  }
  return out;
}

/// Rank-k factor pair (a, b) with a = u_k * sqrt(S_k) and b = sqrt(S_k) * vt_k,
/// so a * b is the best rank-k approximation of the factored matrix.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> truncate(const SvdFactors<Scalar>& f, Eigen::Index k) {
  if (k < 1 || k > f.sigma.size()) {
    std::ostringstream msg;
    msg << "truncate: rank " << k << " outside [1, " << f.sigma.size() << "]";
    throw InvalidInput(msg.str());
  }
  const Vector<Scalar> root = f.sigma.head(k).cwiseSqrt();
  Matrix<Scalar> a = f.u.leftCols(k) * root.asDiagonal();
  Matrix<Scalar> b = root.asDiagonal() * f.vt.topRows(k);
  return {std::move(a), std::move(b)};
}

}  // namespace rankshrink

#endif  // RANKSHRINK_LINALG_HPP
