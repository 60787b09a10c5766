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

#ifndef MFLAB_MICRO_HPP
#define MFLAB_MICRO_HPP

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fock.hpp"
#include "krylov.hpp"
#include "lattice.hpp"
#include "meanfield.hpp"
#include "potentials.hpp"

namespace mflab {

// Composite states live on (tracer lattice) x (truncated Fock space) with the
// tracer index slow: amplitude(x, f) sits at x * dim_F + f. Viewed as a
// dim_F x K_X^{dm} column-major matrix, column x is the Fock vector at x.

enum class TracerMomentum { spectral, central };

inline TracerMomentum parse_tracer_momentum(const std::string &s) {
  if (s == "spectral") return TracerMomentum::spectral;
  if (s == "central") return TracerMomentum::central;
  throw std::invalid_argument("unknown tracer momentum rule: " + s);
}

struct MicroOptions {
  double memory_ceiling_bytes = 3.0e9;
  KineticSymbol tracer_kinetic = KineticSymbol::finite_difference;
  TracerMomentum tracer_p = TracerMomentum::spectral;
  KrylovOptions krylov{40, 1e-10, 1e-12};
};

struct CompositeState {
  CVector amplitudes;
  double N = 1.0;
  double t = 0.0;
};

inline Eigen::Map<const CMatrix> fock_columns(const CVector &v, Eigen::Index dim_f) {
  return {v.data(), dim_f, v.size() / dim_f};
}
inline Eigen::Map<CMatrix> fock_columns(CVector &v, Eigen::Index dim_f) {
  return {v.data(), dim_f, v.size() / dim_f};
}

// O acting on the Fock factor only.
inline CVector apply_fock(const SparseOperator &op, const CVector &v) {
  CVector out(v.size());
  fock_columns(out, op.rows()).noalias() = op * fock_columns(v, op.cols());
  return out;
}

inline void check_lattice_basis(const LatticeConfig &cfg, const FockBasis &b) {
  cfg.validate();
  if (static_cast<std::size_t>(b.modes()) != cfg.modes())
    throw std::invalid_argument("Fock basis mode count differs from the boson lattice");
}

// ---------------------------------------------------------------------------
// Building blocks

// -Delta_h on the boson lattice as a dense modes x modes matrix.
inline Eigen::MatrixXd boson_kinetic_matrix(const LatticeConfig &cfg) {
  return -Eigen::MatrixXd(CMatrix(discrete_laplacian(cfg, LaplacianTarget::boson)).real());
}

// v(x_j - x_k) on boson sites.
inline Eigen::MatrixXd pair_matrix(const PotentialSpec &spec, const LatticeConfig &cfg) {
  const auto n = static_cast<Eigen::Index>(cfg.modes());
  Eigen::MatrixXd v(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k)
      v(j, k) = v_value(spec, min_image(cfg, site_position(cfg, static_cast<std::size_t>(j)),
                                        site_position(cfg, static_cast<std::size_t>(k))));
  return v;
}

// sum_{jk} h_jk a_j* a_k, assembled directly from occupation vectors.
inline SparseOperator one_body_operator(const FockBasis &b, const CMatrix &h) {
  if (h.rows() != b.modes() || h.cols() != b.modes())
    throw std::invalid_argument("one_body_operator: matrix size != modes");
  std::vector<Triplet> t;
  std::vector<int> occ(static_cast<std::size_t>(b.modes()));
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    auto o = b.occupation(i);
    cplx diag = 0.0;
    for (int k = 0; k < b.modes(); ++k) diag += h(k, k) * static_cast<double>(o[k]);
    if (diag != cplx(0.0)) t.emplace_back(i, i, diag);
    for (int k = 0; k < b.modes(); ++k) {
      if (o[k] == 0) continue;
      for (int j = 0; j < b.modes(); ++j) {
        if (j == k || h(j, k) == cplx(0.0)) continue;
        occ.assign(o.begin(), o.end());
        const double amp = std::sqrt(static_cast<double>(occ[k])) *
                           std::sqrt(static_cast<double>(occ[j] + 1));
        occ[k] -= 1;
        occ[j] += 1;
        t.emplace_back(b.rank(occ), i, h(j, k) * amp);
      }
    }
  }
  SparseOperator m(b.dim(), b.dim());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// scale * sum_{jk} v_jk n_j (n_k - delta_jk) on every basis state.
inline RVector pair_diagonal(const FockBasis &b, const Eigen::MatrixXd &v, double scale) {
  RVector d(b.dim());
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    auto o = b.occupation(i);
    double s = 0.0;
    for (int j = 0; j < b.modes(); ++j) {
      if (o[j] == 0) continue;
      for (int k = 0; k < b.modes(); ++k)
        s += v(j, k) * o[j] * (static_cast<double>(o[k]) - (j == k ? 1.0 : 0.0));
    }
    d[i] = scale * s;
  }
  return d;
}

// -Delta_X on the tracer lattice (all tracer coordinates).
inline SparseOperator tracer_kinetic(const LatticeConfig &cfg, KineticSymbol symbol) {
  if (symbol != KineticSymbol::spectral)
    return -periodic_laplacian(cfg.tracer_sites, cfg.tracer_coords(), cfg.tracer_spacing(), symbol);
  const auto n = static_cast<Eigen::Index>(cfg.tracer_dim());
  if (n > 4096) throw std::invalid_argument("spectral tracer kinetic limited to 4096 tracer points");
  LatticeConfig tc = cfg;
  tc.dim = cfg.tracer_coords();
  tc.sites = cfg.tracer_sites;
  const RVector omega = kinetic_symbol(tc, KineticSymbol::spectral);
  CMatrix m(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    CVector e = CVector::Zero(n);
    e[c] = 1.0;
    fft_nd(e, tc.sites, tc.dim, true);
    e.array() *= omega.cast<cplx>().array();
    fft_nd(e, tc.sites, tc.dim, false);
    m.col(c) = e;
  }
  m = 0.5 * (m + m.adjoint()).eval();
  return m.sparseView(1e-14, 1.0);
}

// sum_k w_total(x_k, X) n_k, for tracer lattice point X, on every basis state.
inline RVector coupling_diagonal(const FockBasis &b, const RVector &w_on_sites) {
  RVector d = RVector::Zero(b.dim());
  for (Eigen::Index i = 0; i < b.dim(); ++i) {
    auto o = b.occupation(i);
    for (int k = 0; k < b.modes(); ++k) d[i] += w_on_sites[k] * o[k];
  }
  return d;
}

struct MicroSizeReport {
  Eigen::Index tracer_dim = 0;
  Eigen::Index fock_dim = 0;
  Eigen::Index dim = 0;
  double nonzeros = 0.0;
  double bytes = 0.0;

  std::string str() const {
    std::ostringstream o;
    o << "tracer points " << tracer_dim << ", Fock dimension " << fock_dim
      << ", composite dimension " << dim << ", ~" << nonzeros << " nonzeros, ~"
      << bytes / 1048576.0 << " MiB (operator + Krylov workspace)";
    return o.str();
  }
};

inline MicroSizeReport estimate_size(const LatticeConfig &cfg, const FockBasis &b,
                                     const MicroOptions &opt = {}) {
  MicroSizeReport r;
  r.tracer_dim = static_cast<Eigen::Index>(cfg.tracer_dim());
  r.fock_dim = b.dim();
  r.dim = r.tracer_dim * r.fock_dim;
  // diagonal + hopping (<= 2d neighbours per occupied mode) + tracer stencil
  const double hops = std::min<double>(b.n_max(), b.modes()) * 2.0 * cfg.dim;
  const double stencil = opt.tracer_kinetic == KineticSymbol::spectral
                             ? static_cast<double>(r.tracer_dim)
                             : 2.0 * cfg.tracer_coords() *
                                   static_cast<double>(laplacian_stencil(opt.tracer_kinetic).size());
  const double per_row = 1.0 + hops + stencil;
  r.nonzeros = per_row * static_cast<double>(r.dim);
  r.bytes = r.nonzeros * (sizeof(cplx) + sizeof(std::int64_t)) +
            static_cast<double>(r.dim) * sizeof(std::int64_t) +
            static_cast<double>(opt.krylov.max_dim + 3) * static_cast<double>(r.dim) * sizeof(cplx);
  return r;
}

// Block-diagonal-in-tracer operator from a per-tracer-point Fock diagonal.
inline SparseOperator tracer_diagonal(const std::vector<RVector> &blocks) {
  const Eigen::Index nf = blocks.empty() ? 0 : blocks.front().size();
  CVector d(static_cast<Eigen::Index>(blocks.size()) * nf);
  for (std::size_t x = 0; x < blocks.size(); ++x)
    d.segment(static_cast<Eigen::Index>(x) * nf, nf) = blocks[x].cast<cplx>();
  return sparse_diagonal(d);
}

// H = -Delta_X / 2N + T_b + (1/2N) sum v_jk n_j (n_k - delta_jk) + sum_l sum_k w(x_k - X^(l)) n_k
inline SparseOperator assemble_hamiltonian(const LatticeConfig &cfg, const PotentialSpec &spec,
                                           const FockBasis &b, double N,
                                           const MicroOptions &opt = {}) {
  check_lattice_basis(cfg, b);
  spec.validate();
  if (!(N > 0.0)) throw std::invalid_argument("assemble_hamiltonian: N must be positive");
  const auto size = estimate_size(cfg, b, opt);
  if (size.bytes > opt.memory_ceiling_bytes)
    throw std::invalid_argument("microscopic system exceeds the memory ceiling: " + size.str());

  const Eigen::Index nx = size.tracer_dim;
  const SparseOperator idf = sparse_identity(b.dim());
  const SparseOperator idx = sparse_identity(nx);
  const SparseOperator kx = tracer_kinetic(cfg, opt.tracer_kinetic) * cplx(1.0 / (2.0 * N));
  SparseOperator fock = one_body_operator(b, boson_kinetic_matrix(cfg).cast<cplx>());
  fock += sparse_diagonal(pair_diagonal(b, pair_matrix(spec, cfg), 1.0 / (2.0 * N)).cast<cplx>());

  std::vector<RVector> blocks;
  blocks.reserve(static_cast<std::size_t>(nx));
  for (Eigen::Index x = 0; x < nx; ++x)
    blocks.push_back(coupling_diagonal(
        b, w_total_on_lattice(spec, cfg, tracer_position(cfg, static_cast<std::size_t>(x)))));

  SparseOperator h = kron(kx, idf);
  h += kron(idx, fock);
  h += tracer_diagonal(blocks);
  h.makeCompressed();
  return h;
}

// 1 (x) N_b as a composite diagonal.
inline RVector composite_number_diagonal(const FockBasis &b, Eigen::Index tracer_dim) {
  return number_diagonal(b).replicate(tracer_dim, 1);
}

// ---------------------------------------------------------------------------
// Condition-1 initial data

struct PacketMoments {
  std::array<double, 3> position{};  // ||(X - X0)^p u||, p = 1, 2, 3
  std::array<double, 3> velocity{};  // ||(P/N - V0)^p u||
};

struct TracerPacket {
  CVector amplitudes;  // orthonormal (l2) coefficients on the tracer lattice
  double raw_norm = 0.0;  // lattice L2 norm before renormalization
  double seam_ratio = 0.0;
  PacketMoments moments;
};

// Signed lattice momenta 2 pi k / L per tracer coordinate, flattened.
inline std::vector<std::vector<double>> tracer_momenta(const LatticeConfig &cfg) {
  const int axes = cfg.tracer_coords();
  std::vector<std::vector<double>> p(cfg.tracer_dim(), std::vector<double>(axes));
  for (std::size_t j = 0; j < cfg.tracer_dim(); ++j) {
    auto idx = unflatten(j, cfg.tracer_sites, axes);
    for (int a = 0; a < axes; ++a)
      p[j][a] = 2.0 * std::numbers::pi * signed_bin(idx[a], cfg.tracer_sites) / cfg.length;
  }
  return p;
}

// |X - X0|^p and |P/N - V0|^p moments of an l2-normalised tracer wave function.
inline PacketMoments packet_moments(const LatticeConfig &cfg, const CVector &u, double N,
                                    const std::vector<double> &X0, const std::vector<double> &V0) {
  PacketMoments m;
  const int axes = cfg.tracer_coords();
  std::array<double, 3> px{}, pv{};
  for (std::size_t j = 0; j < cfg.tracer_dim(); ++j) {
    const auto x = tracer_position(cfg, j);
    double r2 = 0.0;
    for (int a = 0; a < axes; ++a) r2 += std::pow(wrap(x[a] - X0[a], cfg.length), 2);
    const double w = std::norm(u[static_cast<Eigen::Index>(j)]);
    for (int p = 1; p <= 3; ++p) px[p - 1] += std::pow(r2, p) * w;
  }
  CVector hat = u;
  fft_nd(hat, cfg.tracer_sites, axes, true);
  const double scale = 1.0 / static_cast<double>(cfg.tracer_dim());
  const auto mom = tracer_momenta(cfg);
  for (std::size_t j = 0; j < mom.size(); ++j) {
    double r2 = 0.0;
    for (int a = 0; a < axes; ++a) r2 += std::pow(mom[j][a] / N - V0[a], 2);
    const double w = std::norm(hat[static_cast<Eigen::Index>(j)]) * scale;
    for (int p = 1; p <= 3; ++p) pv[p - 1] += std::pow(r2, p) * w;
  }
  for (int p = 0; p < 3; ++p) {
    m.position[p] = std::sqrt(px[p]);
    m.velocity[p] = std::sqrt(pv[p]);
  }
  return m;
}

// u_N(X) = N^{dm/4} e^{i N V0.X} u(sqrt(N)(X - X0)) with u a Gaussian whose
// density has standard deviation `width`. Refuses packets the lattice cannot
// resolve (rescaled width < 3 tracer spacings) or that reach the wrap seam
// (|u| at the seam above seam_tol times its peak).
inline TracerPacket tracer_packet(const LatticeConfig &cfg, double N, const std::vector<double> &X0,
                                  const std::vector<double> &V0, double width,
                                  double seam_tol = 1e-4) {
  cfg.validate();
  const int axes = cfg.tracer_coords();
  if (static_cast<int>(X0.size()) != axes || static_cast<int>(V0.size()) != axes)
    throw std::invalid_argument("tracer_packet: X0/V0 need tracer_count*dim components");
  if (!(N > 0.0) || !(width > 0.0))
    throw std::invalid_argument("tracer_packet: N and width must be positive");
  const double sigma = width / std::sqrt(N);
  if (sigma < 3.0 * cfg.tracer_spacing()) {
    std::ostringstream msg;
    msg << "tracer lattice too coarse: packet width " << sigma << " < 3 tracer spacings ("
        << 3.0 * cfg.tracer_spacing() << ")";
    throw std::invalid_argument(msg.str());
  }
  TracerPacket pk;
  pk.amplitudes.resize(static_cast<Eigen::Index>(cfg.tracer_dim()));
  double peak = 0.0, seam = 0.0;
  for (std::size_t j = 0; j < cfg.tracer_dim(); ++j) {
    const auto x = tracer_position(cfg, j);
    double r2 = 0.0, ph = 0.0;
    bool at_seam = false;
    for (int a = 0; a < axes; ++a) {
      const double dx = wrap(x[a] - X0[a], cfg.length);
      r2 += dx * dx;
      ph += N * V0[a] * (X0[a] + dx);
      // lattice points adjacent to the point opposite X0
      const double opp = std::abs(std::abs(dx) - 0.5 * cfg.length);
      if (opp <= cfg.tracer_spacing()) at_seam = true;
    }
    const double amp = std::exp(-r2 / (4.0 * sigma * sigma));
    peak = std::max(peak, amp);
    if (at_seam) seam = std::max(seam, amp);
    pk.amplitudes[static_cast<Eigen::Index>(j)] = amp * std::exp(I * ph);
  }
  // continuum normalisation (2 pi sigma^2)^{-dm/4}
  const double cont = std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.25 * axes);
  pk.amplitudes *= cont;
  pk.raw_norm = std::sqrt(cfg.tracer_cell_volume()) * pk.amplitudes.norm();
  pk.seam_ratio = peak > 0.0 ? seam / peak : 0.0;
  if (pk.seam_ratio > seam_tol) {
    std::ostringstream msg;
    msg << "tracer packet reaches the wrap seam: |u| ratio " << pk.seam_ratio << " > " << seam_tol;
    throw std::invalid_argument(msg.str());
  }
  pk.amplitudes /= pk.amplitudes.norm();
  pk.moments = packet_moments(cfg, pk.amplitudes, N, X0, V0);
  return pk;
}

struct InitialData {
  CompositeState state;
  double fock_tail_mass = 0.0;  // coherent weight lost above n_max before renormalisation
  TracerPacket packet;
  MeanFieldState meanfield;
};

// u_N (x) W(sqrt(N) phi0) Omega, renormalised after truncation.
inline InitialData build_initial(const LatticeConfig &cfg, const PotentialSpec &spec,
                                 const FockBasis &b, double N, const std::vector<double> &X0,
                                 const std::vector<double> &V0, const GridField &phi0,
                                 double packet_width, double seam_tol = 1e-4) {
  check_lattice_basis(cfg, b);
  spec.validate();
  InitialData d;
  d.packet = tracer_packet(cfg, N, X0, V0, packet_width, seam_tol);
  CVector coh = coherent_state(b, phi0, N);
  d.fock_tail_mass = 1.0 - coh.squaredNorm();
  coh /= coh.norm();
  d.state.N = N;
  d.state.t = 0.0;
  d.state.amplitudes.resize(d.packet.amplitudes.size() * b.dim());
  fock_columns(d.state.amplitudes, b.dim()).noalias() = coh * d.packet.amplitudes.transpose();
  d.meanfield = MeanFieldState{X0, V0, phi0, 0.0};
  return d;
}

// ---------------------------------------------------------------------------
// Evolution

// e^{-i t H} psi sampled every dt_report on [0, T].
inline std::vector<CompositeState> evolve(const SparseOperator &h, const CompositeState &init,
                                          double T, double dt_report, const KrylovOptions &opt = {},
                                          KrylovStats *stats = nullptr) {
  if (T < 0.0 || !(dt_report > 0.0)) throw std::invalid_argument("evolve: need T >= 0, dt_report > 0");
  if (h.rows() != init.amplitudes.size()) throw std::invalid_argument("evolve: dimension mismatch");
  const long steps = std::lround(T / dt_report);
  if (std::abs(steps * dt_report - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("evolve: T must be a multiple of dt_report");
  std::vector<CompositeState> out{init};
  CompositeState s = init;
  const double norm0 = init.amplitudes.norm();
  for (long n = 1; n <= steps; ++n) {
    s.amplitudes = expv(h, s.amplitudes, dt_report, opt, stats);
    s.t = init.t + n * dt_report;
    const double drift = std::abs(s.amplitudes.norm() - norm0);
    if (drift > 1e-9) {
      std::ostringstream msg;
      msg << "evolve: norm drifted by " << drift << " at t = " << s.t;
      throw std::runtime_error(msg.str());
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Observables

struct TracerObservables {
  std::vector<double> X;        // <X> per tracer coordinate
  std::vector<double> P_over_N; // <P>/N per coordinate
  double var_X = 0.0;           // sum over coordinates of Var X
  double var_V = 0.0;           // sum over coordinates of Var(P/N)
};

// Tracer marginal |psi(x)|^2 summed over the Fock factor.
inline RVector tracer_density(const CVector &psi, Eigen::Index dim_f) {
  return fock_columns(psi, dim_f).colwise().squaredNorm().transpose();
}

inline TracerObservables measure_tracer(const LatticeConfig &cfg, const FockBasis &b,
                                        const CompositeState &s,
                                        TracerMomentum rule = TracerMomentum::spectral) {
  const int axes = cfg.tracer_coords();
  const Eigen::Index nx = static_cast<Eigen::Index>(cfg.tracer_dim());
  if (s.amplitudes.size() != nx * b.dim())
    throw std::invalid_argument("measure_tracer: state size mismatch");
  TracerObservables o;
  o.X.assign(axes, 0.0);
  o.P_over_N.assign(axes, 0.0);
  const RVector rho = tracer_density(s.amplitudes, b.dim());
  const double L = cfg.length;
  for (int a = 0; a < axes; ++a) {
    // circular mean as reference, then minimum-image moments around it
    cplx z = 0.0;
    for (Eigen::Index j = 0; j < nx; ++j)
      z += rho[j] * std::exp(I * (2.0 * std::numbers::pi *
                                  tracer_position(cfg, static_cast<std::size_t>(j))[a] / L));
    const double ref = std::arg(z) / (2.0 * std::numbers::pi) * L;
    double m1 = 0.0, m2 = 0.0;
    for (Eigen::Index j = 0; j < nx; ++j) {
      const double dx = wrap(tracer_position(cfg, static_cast<std::size_t>(j))[a] - ref, L);
      // an exactly antipodal point has images at +L/2 and -L/2
      if (std::abs(std::abs(dx) - 0.5 * L) > 1e-12 * L) m1 += rho[j] * dx;
      m2 += rho[j] * dx * dx;
    }
    double mean = ref + m1;
    mean -= L * std::floor(mean / L);
    o.X[a] = mean;
    o.var_X += m2 - m1 * m1;
  }

  // Tracer fields per Fock row: rows of the dim_F x nx matrix.
  CMatrix rows = fock_columns(s.amplitudes, b.dim()).transpose();  // nx x dim_F
  if (rule == TracerMomentum::spectral) {
    for (Eigen::Index f = 0; f < rows.cols(); ++f) {
      CVector col = rows.col(f);
      fft_nd(col, cfg.tracer_sites, axes, true);
      rows.col(f) = col;
    }
    const RVector w = rows.rowwise().squaredNorm() / static_cast<double>(nx);
    const auto mom = tracer_momenta(cfg);
    for (int a = 0; a < axes; ++a) {
      double p1 = 0.0, p2 = 0.0;
      for (Eigen::Index j = 0; j < nx; ++j) {
        const double p = mom[static_cast<std::size_t>(j)][a];
        p1 += w[j] * p;
        p2 += w[j] * p * p;
      }
      o.P_over_N[a] = p1 / s.N;
      o.var_V += (p2 - p1 * p1) / (s.N * s.N);
    }
  } else {
    const double h = cfg.tracer_spacing();
    for (int a = 0; a < axes; ++a) {
      CMatrix d(rows.rows(), rows.cols());
      for (Eigen::Index j = 0; j < nx; ++j) {
        auto idx = unflatten(static_cast<std::size_t>(j), cfg.tracer_sites, axes);
        auto up = idx, dn = idx;
        up[a] = (up[a] + 1) % cfg.tracer_sites;
        dn[a] = (dn[a] + cfg.tracer_sites - 1) % cfg.tracer_sites;
        d.row(j) = (rows.row(static_cast<Eigen::Index>(flatten(up, cfg.tracer_sites))) -
                    rows.row(static_cast<Eigen::Index>(flatten(dn, cfg.tracer_sites)))) /
                   (2.0 * h);
      }
      // P = -i D
      const double p1 = (rows.conjugate().cwiseProduct(-I * d)).sum().real();
      const double p2 = d.squaredNorm();
      o.P_over_N[a] = p1 / s.N;
      o.var_V += (p2 - p1 * p1) / (s.N * s.N);
    }
  }
  return o;
}

struct NumberMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline NumberMoments number_moments(const FockBasis &b, const CVector &psi) {
  const RVector n = number_diagonal(b);
  const auto cols = fock_columns(psi, b.dim());
  const RVector w = cols.rowwise().squaredNorm();
  NumberMoments m;
  m.mean = w.dot(n);
  m.variance = w.dot(n.cwiseProduct(n)) - m.mean * m.mean;
  return m;
}

inline double energy_expectation(const SparseOperator &h, const CVector &psi) {
  return psi.dot(h * psi).real();
}

// Gamma(x_j, x_k) = <a_k* a_j> / (N h^d), the kernel of the one-particle
// density; a coherent state gives phi(x_j) conj(phi(x_k)).
struct OneParticleDensity {
  CMatrix gamma;
  double cell_volume = 1.0;
  double asymmetry = 0.0;  // max |Gamma - Gamma^dagger| before Hermitisation

  double trace() const { return cell_volume * gamma.diagonal().real().sum(); }
};

inline OneParticleDensity one_particle_density(const LatticeConfig &cfg, const FockBasis &b,
                                               const CompositeState &s) {
  check_lattice_basis(cfg, b);
  const int m = b.modes();
  std::vector<CVector> lowered;
  lowered.reserve(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) lowered.push_back(apply_fock(ladder(b, k, Ladder::annihilate), s.amplitudes));
  OneParticleDensity g;
  g.cell_volume = cfg.cell_volume();
  g.gamma.resize(m, m);
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < m; ++k)
      g.gamma(j, k) = lowered[static_cast<std::size_t>(k)].dot(lowered[static_cast<std::size_t>(j)]) /
                      (s.N * g.cell_volume);
  g.asymmetry = (g.gamma - g.gamma.adjoint()).cwiseAbs().maxCoeff();
  if (g.asymmetry > 1e-10)
    throw std::runtime_error("one_particle_density: asymmetry " + std::to_string(g.asymmetry));
  g.gamma = 0.5 * (g.gamma + g.gamma.adjoint()).eval();
  return g;
}

struct DensityDistance {
  double trace = 0.0;  // Tr |Gamma - |phi><phi||
  double hs = 0.0;     // Hilbert-Schmidt norm of the same difference
};

// Distances of the operator with kernel S = Gamma - phi conj(phi)^T; in the
// orthonormal site basis its matrix is h^d S.
inline DensityDistance trace_distance(const OneParticleDensity &g, const GridField &phi) {
  if (phi.size() != g.gamma.rows())
    throw std::invalid_argument("trace_distance: field and density sizes differ");
  const double n = norm_l2(phi);
  if (std::abs(n - 1.0) > 1e-8)
    throw std::invalid_argument("trace_distance: phi must be normalised");
  CMatrix S = g.cell_volume * (g.gamma - phi.values * phi.values.adjoint());
  S = 0.5 * (S + S.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMatrix> es(S, Eigen::EigenvaluesOnly);
  DensityDistance d;
  d.trace = es.eigenvalues().cwiseAbs().sum();
  d.hs = S.norm();
  return d;
}

}  // namespace mflab

#endif  // MFLAB_MICRO_HPP
