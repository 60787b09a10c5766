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

#ifndef MFLAB_FOCK_HPP
#define MFLAB_FOCK_HPP

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "krylov.hpp"
#include "lattice.hpp"
#include "sparse.hpp"

namespace mflab {

// Occupation-number basis of the bosonic Fock space over `modes` lattice
// modes, truncated at total number n_max. States are ordered by total number
// and, inside a sector, lexicographically with (0,..,0,n) first, so every
// cutoff chi(N_b <= M) is a leading block.
class FockBasis {
 public:
  FockBasis(int modes, int n_max) : modes_(modes), n_max_(n_max) {
    if (modes < 1) throw std::invalid_argument("FockBasis: need at least one mode");
    if (n_max < 0 || n_max > 255) throw std::invalid_argument("FockBasis: n_max must be in [0,255]");
    const int top = n_max + modes + 1;
    binom_.assign(static_cast<std::size_t>(top + 1) * (top + 1), 0);
    for (int n = 0; n <= top; ++n) {
      binom_at(n, 0) = 1;
      for (int k = 1; k <= n; ++k) {
        const std::uint64_t a = binom_at(n - 1, k - 1), b = binom_at(n - 1, k);
        if (a > std::numeric_limits<std::uint64_t>::max() - b)
          throw std::invalid_argument("FockBasis: dimension overflows");
        binom_at(n, k) = a + b;
      }
    }
    const std::uint64_t d = binom(n_max + modes, modes);
    if (d > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
      throw std::invalid_argument("FockBasis: dimension too large");
    dim_ = static_cast<Eigen::Index>(d);
    occ_.reserve(static_cast<std::size_t>(dim_) * modes);
    totals_.reserve(static_cast<std::size_t>(dim_));
    std::vector<int> cur(static_cast<std::size_t>(modes), 0);
    for (int n = 0; n <= n_max; ++n) {
      sector_start_.push_back(static_cast<Eigen::Index>(totals_.size()));
      enumerate(0, n, cur, n);
    }
    sector_start_.push_back(dim_);
  }

  int modes() const { return modes_; }
  int n_max() const { return n_max_; }
  Eigen::Index dim() const { return dim_; }

  static std::uint64_t dimension(int modes, int n_max) {
    // C(n_max + modes, modes), computed incrementally.
    long double r = 1.0L;
    for (int i = 1; i <= modes; ++i) r = r * (n_max + i) / i;
    return static_cast<std::uint64_t>(std::llround(r));
  }

  std::span<const std::uint8_t> occupation(Eigen::Index i) const {
    return {occ_.data() + static_cast<std::size_t>(i) * modes_, static_cast<std::size_t>(modes_)};
  }
  int occupation(Eigen::Index i, int k) const {
    return occ_[static_cast<std::size_t>(i) * modes_ + k];
  }
  int total(Eigen::Index i) const { return totals_[static_cast<std::size_t>(i)]; }
  std::vector<int> unrank(Eigen::Index i) const {
    auto o = occupation(i);
    return {o.begin(), o.end()};
  }

  // Number of basis states with total <= n.
  Eigen::Index sector_end(int n) const {
    if (n < 0) return 0;
    if (n >= n_max_) return dim_;
    return sector_start_[static_cast<std::size_t>(n) + 1];
  }

  // Combinatorial rank; independent of the stored enumeration.
  Eigen::Index rank(std::span<const int> occ) const {
    if (static_cast<int>(occ.size()) != modes_)
      throw std::invalid_argument("FockBasis::rank: wrong number of modes");
    int n = 0;
    for (int v : occ) {
      if (v < 0) throw std::invalid_argument("FockBasis::rank: negative occupation");
      n += v;
    }
    if (n > n_max_) throw std::invalid_argument("FockBasis::rank: total exceeds n_max");
    std::uint64_t r = n == 0 ? 0 : binom(n + modes_ - 1, modes_);
    int rest = n;
    for (int k = 0; k + 1 < modes_; ++k) {
      const int free = modes_ - k - 2;
      for (int v = 0; v < occ[k]; ++v) r += binom(rest - v + free, free);
      rest -= occ[k];
    }
    return static_cast<Eigen::Index>(r);
  }

  Eigen::Index rank_shifted(Eigen::Index i, int k, int delta) const {
    std::vector<int> o = unrank(i);
    o[k] += delta;
    return rank(o);
  }

  std::uint64_t binom(int n, int k) const {
    if (k < 0 || n < 0 || k > n) return 0;
    return binom_[static_cast<std::size_t>(n) * stride() + k];
  }

 private:
  std::size_t stride() const { return static_cast<std::size_t>(n_max_ + modes_ + 2); }
  std::uint64_t &binom_at(int n, int k) { return binom_[static_cast<std::size_t>(n) * stride() + k]; }

  void enumerate(int k, int rest, std::vector<int> &cur, int n) {
    if (k == modes_ - 1) {
      cur[k] = rest;
      for (int v : cur) occ_.push_back(static_cast<std::uint8_t>(v));
      totals_.push_back(static_cast<std::uint8_t>(n));
      return;
    }
    for (int v = 0; v <= rest; ++v) {
      cur[k] = v;
      enumerate(k + 1, rest - v, cur, n);
    }
  }

  int modes_;
  int n_max_;
  Eigen::Index dim_ = 0;
  std::vector<std::uint64_t> binom_;
  std::vector<std::uint8_t> occ_;
  std::vector<std::uint8_t> totals_;
  std::vector<Eigen::Index> sector_start_;
};

enum class Ladder { create, annihilate };

// a_k* or a_k on the truncated space; creation out of the top sector is zero.
inline SparseOperator ladder(const FockBasis &b, int k, Ladder kind) {
  if (k < 0 || k >= b.modes()) throw std::invalid_argument("ladder: mode index out of range");
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(b.dim()));
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    const int n = b.occupation(i, k);
    if (kind == Ladder::annihilate) {
      if (n > 0) t.emplace_back(b.rank_shifted(i, k, -1), i, std::sqrt(static_cast<double>(n)));
    } else if (b.total(i) < b.n_max()) {
      t.emplace_back(b.rank_shifted(i, k, +1), i, std::sqrt(static_cast<double>(n + 1)));
    }
  }
  SparseOperator m(b.dim(), b.dim());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// All creation and annihilation operators of a basis.
struct LadderSet {
  std::vector<SparseOperator> create;
  std::vector<SparseOperator> annihilate;

  explicit LadderSet(const FockBasis &b) {
    for (int k = 0; k < b.modes(); ++k) {
      annihilate.push_back(ladder(b, k, Ladder::annihilate));
      create.push_back(annihilate.back().adjoint());
    }
  }
};

// Diagonal of n_k over the basis.
inline RVector occupation_diagonal(const FockBasis &b, int k) {
  RVector d(b.dim());
  for (Eigen::Index i = 0; i < b.dim(); ++i) d[i] = b.occupation(i, k);
  return d;
}

inline RVector number_diagonal(const FockBasis &b) {
  RVector d(b.dim());
  for (Eigen::Index i = 0; i < b.dim(); ++i) d[i] = b.total(i);
  return d;
}

inline SparseOperator number_operator(const FockBasis &b) {
  return sparse_diagonal(number_diagonal(b).cast<cplx>());
}

// chi(N_b <= M)
inline SparseOperator number_cutoff(const FockBasis &b, int M) {
  if (M < 0) throw std::invalid_argument("number_cutoff: M must be >= 0");
  CVector d = CVector::Zero(b.dim());
  d.head(b.sector_end(M)).setOnes();
  return sparse_diagonal(d);
}

inline CVector vacuum(const FockBasis &b) {
  CVector v = CVector::Zero(b.dim());
  v[0] = 1.0;
  return v;
}

// Mode amplitudes alpha_k = sqrt(N h^d) phi(x_k) of the displacement by sqrt(N) phi.
inline CVector mode_amplitudes(const GridField &phi, double N) {
  if (N < 0.0) throw std::invalid_argument("mode_amplitudes: N must be >= 0");
  return std::sqrt(N * phi.cfg.cell_volume()) * phi.values;
}

// Refuses displacements whose Poisson tail does not fit below n_max.
inline void check_coherent_tail(const FockBasis &b, const GridField &phi, double N) {
  if (static_cast<Eigen::Index>(phi.cfg.modes()) != b.modes())
    throw std::invalid_argument("coherent state: field and basis have different mode counts");
  const double nrm = norm_l2(phi);
  if (nrm > 1.0 + 1e-12)
    throw std::invalid_argument("coherent state: ||phi|| must not exceed 1");
  const double mean = N * nrm * nrm;
  if (mean + 6.0 * std::sqrt(mean) > b.n_max()) {
    std::ostringstream msg;
    msg << "coherent state: mean occupation " << mean << " plus six standard deviations exceeds n_max = "
        << b.n_max();
    throw std::invalid_argument(msg.str());
  }
}

// A = sum_k alpha_k a_k* - conj(alpha_k) a_k; W = e^A. Returns the Hermitian iA.
inline SparseOperator displacement_generator(const FockBasis &b, const CVector &alpha) {
  if (alpha.size() != b.modes())
    throw std::invalid_argument("displacement_generator: amplitude count != modes");
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    for (int k = 0; k < b.modes(); ++k) {
      const int n = b.occupation(i, k);
      if (b.total(i) < b.n_max()) {
        const Eigen::Index up = b.rank_shifted(i, k, +1);
        const cplx v = I * alpha[k] * std::sqrt(static_cast<double>(n + 1));
        t.emplace_back(up, i, v);
        t.emplace_back(i, up, std::conj(v));
      }
    }
  }
  SparseOperator m(b.dim(), b.dim());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// W(alpha)^{sign} applied to every Fock column of `v` (a dim x cols block
// stored column-major), through one Krylov propagation of iA.
inline CVector apply_weyl(const SparseOperator &iA, const CVector &v, int sign,
                          const KrylovOptions &opt = {}, KrylovStats *stats = nullptr) {
  const Eigen::Index d = iA.rows();
  if (d == 0 || v.size() % d != 0) throw std::invalid_argument("apply_weyl: size mismatch");
  const Eigen::Index cols = v.size() / d;
  auto mv = [&](const CVector &x) -> CVector {
    CVector y(x.size());
    Eigen::Map<const CMatrix> X(x.data(), d, cols);
    Eigen::Map<CMatrix> Y(y.data(), d, cols);
    Y.noalias() = iA * X;
    return y;
  };
  // e^{-i tau (iA)} = e^{tau A}
  return expv_hermitian(mv, v, static_cast<double>(sign), opt, stats);
}

// Dense e^A, for small bases.
inline CMatrix weyl_matrix(const FockBasis &b, const CVector &alpha) {
  if (b.dim() > 4000) throw std::invalid_argument("weyl_matrix: dense route limited to dim <= 4000");
  const CMatrix iA = CMatrix(displacement_generator(b, alpha));
  return CMatrix(-I * iA).exp();
}

enum class CoherentConstruction { direct, exponential };

// Truncated W(sqrt(N) phi) Omega. The direct route writes down
// e^{-|alpha|^2/2} prod alpha_k^{n_k}/sqrt(n_k!); the exponential route
// propagates the vacuum with the truncated generator.
inline CVector coherent_state(const FockBasis &b, const GridField &phi, double N,
                              CoherentConstruction how = CoherentConstruction::direct,
                              const KrylovOptions &opt = {}) {
  check_coherent_tail(b, phi, N);
  const CVector alpha = mode_amplitudes(phi, N);
  if (how == CoherentConstruction::exponential)
    return apply_weyl(displacement_generator(b, alpha), vacuum(b), +1, opt);
  const double pref = std::exp(-0.5 * alpha.squaredNorm());
  CVector out(b.dim());
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    cplx a = pref;
    for (int k = 0; k < b.modes(); ++k) {
      const int n = b.occupation(i, k);
      if (n == 0) continue;
      a *= std::pow(alpha[k], n) / std::sqrt(std::tgamma(n + 1.0));
    }
    out[i] = a;
  }
  return out;
}

// sum_{n > n_max} e^{-mu} mu^n / n!, and the same weighted by n.
struct PoissonTail {
  double mass = 0.0;
  double first_moment = 0.0;
};

inline PoissonTail poisson_tail(double mu, int n_max) {
  PoissonTail t;
  if (mu == 0.0) return t;
  double term = std::exp(-mu);
  for (int n = 1; n <= n_max; ++n) term *= mu / n;
  for (int n = n_max + 1; n < n_max + 400; ++n) {
    term *= mu / n;
    t.mass += term;
    t.first_moment += n * term;
    if (term < 1e-30 * (t.mass + 1e-300)) break;
  }
  return t;
}

// max over random probes v = Pi v of ||Pi (W* a_k W - a_k - alpha_k) Pi v|| / ||v||,
// with Pi = chi(N_b <= interior).
inline double weyl_conjugate_check(const FockBasis &b, const GridField &phi, double N, int mode,
                                   int interior, int probes = 8, std::uint64_t seed = 11,
                                   KrylovOptions opt = {60, 1e-13, 1e-12}) {
  check_coherent_tail(b, phi, N);
  if (interior < 0 || interior > b.n_max())
    throw std::invalid_argument("weyl_conjugate_check: interior level out of range");
  const CVector alpha = mode_amplitudes(phi, N);
  const SparseOperator iA = displacement_generator(b, alpha);
  const SparseOperator a = ladder(b, mode, Ladder::annihilate);
  const Eigen::Index inner = b.sector_end(interior);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    CVector v = CVector::Zero(b.dim());
    v.head(inner) = random_vector(inner, rng);
    CVector r = apply_weyl(iA, v, +1, opt);
    r = a * r;
    r = apply_weyl(iA, r, -1, opt);
    r -= a * v + alpha[mode] * v;
    worst = std::max(worst, r.head(inner).norm() / v.norm());
  }
  return worst;
}

}  // namespace mflab

#endif  // MFLAB_FOCK_HPP
