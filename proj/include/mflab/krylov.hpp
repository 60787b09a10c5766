// Copyright 2026 The mflab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MFLAB_KRYLOV_HPP
#define MFLAB_KRYLOV_HPP

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparse.hpp"

namespace mflab {

// full: classical Gram-Schmidt against the whole basis, twice.
// local: three-term recurrence plus one pass against the last two vectors;
// cheaper on large spaces, Hermitian (Lanczos) path only.
enum class Reorthogonalization { full, local };

inline Reorthogonalization parse_reorthogonalization(const std::string &s) {
  if (s == "full") return Reorthogonalization::full;
  if (s == "local") return Reorthogonalization::local;
  throw std::invalid_argument("unknown reorthogonalisation: " + s);
}

struct KrylovOptions {
  int max_dim = 40;
  double tol = 1e-10;  // error budget for the whole interval
  double min_step_fraction = 1e-12;
  Reorthogonalization reorth = Reorthogonalization::full;
};

struct KrylovStats {
  int substeps = 0;
  long matvecs = 0;
  int breakdowns = 0;
  double error_estimate = 0.0;  // sum of accepted local estimates
};

namespace detail {

inline double rounding_floor(Eigen::Index k, double beta0, double residual) {
  return 16.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(k) * beta0 * residual;
}

// Picks the largest substep s <= remaining whose a-posteriori estimate
// err(s) stays within the per-unit-time budget, or below `floor`, the level
// at which rounding in the small problem makes the estimate meaningless.
// `propagate(s, y)` fills the small-space coefficients and returns the estimate.
template <class SmallProp>
double choose_substep(double remaining, double total, double tol, double min_step, double floor,
                      SmallProp &&propagate, CVector &y, double &err) {
  double s = remaining;
  for (;;) {
    err = propagate(s, y);
    if (err <= std::max(tol * s / total, floor)) return s;
    s *= 0.5;
    if (s < min_step) {
      std::ostringstream msg;
      msg << "Krylov propagation did not converge: substep " << s << " below minimum "
          << min_step << " (local error estimate " << err << ")";
      throw std::runtime_error(msg.str());
    }
  }
}

}  // namespace detail

// e^{-i tau H} v for Hermitian H given as a mat-vec callable
// `apply(const CVector&) -> CVector`. Lanczos with adaptive substeps.
template <class MatVec>
CVector expv_hermitian(MatVec &&apply, const CVector &v, double tau,
                       const KrylovOptions &opt = {}, KrylovStats *stats = nullptr) {
  CVector w = v;
  if (tau == 0.0 || v.norm() == 0.0) return w;
  const double total = std::abs(tau);
  const double sign = tau > 0 ? 1.0 : -1.0;
  double done = 0.0;
  const double min_step = opt.min_step_fraction * total;
  CMatrix Q(v.size(), opt.max_dim);
  while (total - done > 1e-15 * total) {
    const double beta0 = w.norm();
    Q.col(0) = w / beta0;
    std::vector<double> alpha, beta;
    double residual = 0.0;
    bool happy = false;
    for (int j = 0; j < opt.max_dim; ++j) {
      CVector u = apply(Q.col(j));
      if (stats) ++stats->matvecs;
      const double a = Q.col(j).dot(u).real();
      alpha.push_back(a);
      u -= a * Q.col(j);
      if (j > 0) u -= beta.back() * Q.col(j - 1);
      if (opt.reorth == Reorthogonalization::full) {
        for (int pass = 0; pass < 2; ++pass) {
          const CVector c = Q.leftCols(j + 1).adjoint() * u;
          u.noalias() -= Q.leftCols(j + 1) * c;
        }
      } else {
        const int lo = std::max(0, j - 1);
        const CVector c = Q.middleCols(lo, j + 1 - lo).adjoint() * u;
        u.noalias() -= Q.middleCols(lo, j + 1 - lo) * c;
      }
      const double b = u.norm();
      const double scale = std::abs(a) + (j > 0 ? beta.back() : 0.0) + 1e-300;
      if (b <= 1e-13 * scale) {
        happy = true;
        residual = 0.0;
        if (stats) ++stats->breakdowns;
        break;
      }
      if (j + 1 == opt.max_dim) {
        residual = b;
        break;
      }
      beta.push_back(b);
      Q.col(j + 1) = u / b;
    }
    const auto k = static_cast<Eigen::Index>(alpha.size());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) T(i, i) = alpha[i];
    for (Eigen::Index i = 0; i + 1 < k; ++i) T(i, i + 1) = T(i + 1, i) = beta[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    const Eigen::VectorXd lam = es.eigenvalues();
    const Eigen::VectorXd q0 = es.eigenvectors().row(0).transpose();
    auto small = [&](double s, CVector &y) {
      CVector c(k);
      for (Eigen::Index i = 0; i < k; ++i) c[i] = std::exp(-I * sign * s * lam[i]) * q0[i];
      y = es.eigenvectors().cast<cplx>() * c;
      return happy ? 0.0 : beta0 * residual * std::abs(y[k - 1]);
    };
    CVector y;
    double err = 0.0;
    const double s = happy ? (total - done)
                           : detail::choose_substep(total - done, total, opt.tol, min_step,
                                                    detail::rounding_floor(k, beta0, residual), small, y,
                                                    err);
    if (happy) small(s, y);
    w.noalias() = Q.leftCols(k) * (beta0 * y);
    done += s;
    if (stats) {
      ++stats->substeps;
      stats->error_estimate += err;
    }
  }
  return w;
}

// e^{-i tau A} v for a general (not necessarily Hermitian) A. Arnoldi with
// reorthogonalisation; the small exponential uses scaling and squaring.
template <class MatVec>
CVector expv_general(MatVec &&apply, const CVector &v, double tau,
                     const KrylovOptions &opt = {}, KrylovStats *stats = nullptr) {
  CVector w = v;
  if (tau == 0.0 || v.norm() == 0.0) return w;
  const double total = std::abs(tau);
  const double sign = tau > 0 ? 1.0 : -1.0;
  double done = 0.0;
  const double min_step = opt.min_step_fraction * total;
  CMatrix Q(v.size(), opt.max_dim);
  while (total - done > 1e-15 * total) {
    const double beta0 = w.norm();
    Q.col(0) = w / beta0;
    CMatrix H = CMatrix::Zero(opt.max_dim + 1, opt.max_dim);
    int k = 0;
    double residual = 0.0;
    bool happy = false;
    for (int j = 0; j < opt.max_dim; ++j) {
      CVector u = apply(Q.col(j));
      if (stats) ++stats->matvecs;
      for (int pass = 0; pass < 2; ++pass) {
        const CVector c = Q.leftCols(j + 1).adjoint() * u;
        H.col(j).head(j + 1) += c;
        u.noalias() -= Q.leftCols(j + 1) * c;
      }
      const double b = u.norm();
      k = j + 1;
      if (b <= 1e-13 * (H.col(j).norm() + 1e-300)) {
        happy = true;
        if (stats) ++stats->breakdowns;
        break;
      }
      H(j + 1, j) = b;
      residual = b;
      if (j + 1 == opt.max_dim) break;
      Q.col(j + 1) = u / b;
    }
    const CMatrix Hk = H.topLeftCorner(k, k);
    auto small = [&](double s, CVector &y) {
      const CMatrix E = (Hk * (-I * sign * s)).exp();
      y = E.col(0);
      return happy ? 0.0 : beta0 * residual * std::abs(y[k - 1]);
    };
    CVector y;
    double err = 0.0;
    const double s = happy ? (total - done)
                           : detail::choose_substep(total - done, total, opt.tol, min_step,
                                                    detail::rounding_floor(k, beta0, residual), small, y,
                                                    err);
    if (happy) small(s, y);
    w.noalias() = Q.leftCols(k) * (beta0 * y);
    done += s;
    if (stats) {
      ++stats->substeps;
      stats->error_estimate += err;
    }
  }
  return w;
}

// e^{-i tau H} v for a Hermitian sparse operator.
inline CVector expv(const SparseOperator &h, const CVector &v, double tau,
                    const KrylovOptions &opt = {}, KrylovStats *stats = nullptr) {
  return expv_hermitian([&](const CVector &x) -> CVector { return h * x; }, v, tau, opt, stats);
}

}  // namespace mflab

#endif  // MFLAB_KRYLOV_HPP
