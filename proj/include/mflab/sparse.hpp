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

#ifndef MFLAB_SPARSE_HPP
#define MFLAB_SPARSE_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

namespace mflab {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using SparseOperator = Eigen::SparseMatrix<cplx, Eigen::RowMajor, std::int64_t>;
using Triplet = Eigen::Triplet<cplx, std::int64_t>;

inline constexpr cplx I{0.0, 1.0};

inline SparseOperator sparse_identity(Eigen::Index n) {
  SparseOperator id(n, n);
  id.setIdentity();
  return id;
}

inline SparseOperator sparse_diagonal(const CVector &d) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (d[i] != cplx(0.0)) t.emplace_back(i, i, d[i]);
  SparseOperator m(d.size(), d.size());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// A (x) B with the row index of A as the slow index.
inline SparseOperator kron(const SparseOperator &a, const SparseOperator &b) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (Eigen::Index i = 0; i < a.outerSize(); ++i)
    for (SparseOperator::InnerIterator ia(a, i); ia; ++ia)
      for (Eigen::Index k = 0; k < b.outerSize(); ++k)
        for (SparseOperator::InnerIterator ib(b, k); ib; ++ib)
          t.emplace_back(ia.row() * b.rows() + ib.row(),
                         ia.col() * b.cols() + ib.col(),
                         ia.value() * ib.value());
  SparseOperator m(a.rows() * b.rows(), a.cols() * b.cols());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// max_ij |A_ij - conj(A_ji)|
inline double hermiticity_defect(const SparseOperator &a) {
  SparseOperator d = a - SparseOperator(a.adjoint());
  double m = 0.0;
  for (Eigen::Index i = 0; i < d.outerSize(); ++i)
    for (SparseOperator::InnerIterator it(d, i); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

inline double max_abs_entry(const SparseOperator &a) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.outerSize(); ++i)
    for (SparseOperator::InnerIterator it(a, i); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

// Normalized random complex vector with i.i.d. Gaussian entries.
inline CVector random_vector(Eigen::Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = cplx(g(rng), g(rng));
  return v / v.norm();
}

// max over probes of ||[A,B] v|| / ||v||
inline double commutator_norm(const SparseOperator &a, const SparseOperator &b,
                              int probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    CVector v = random_vector(a.cols(), rng);
    CVector c = a * (b * v) - b * (a * v);
    worst = std::max(worst, c.norm());
  }
  return worst;
}

}  // namespace mflab

#endif  // MFLAB_SPARSE_HPP
