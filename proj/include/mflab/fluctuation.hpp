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

#ifndef MFLAB_FLUCTUATION_HPP
#define MFLAB_FLUCTUATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fock.hpp"
#include "krylov.hpp"
#include "meanfield.hpp"
#include "micro.hpp"

namespace mflab {

// ---------------------------------------------------------------------------
// Scalar phase

// N int (w_total(x, X) + (v * |phi|^2)(x) / 2) |phi(x)|^2 dx at one mean-field state.
inline double phase_integrand(const MeanFieldModel &model, const MeanFieldState &s, double N) {
  const RVector rho = density(s.phi);
  const RVector w = w_total_on_lattice(model.potentials(), model.lattice(), s.X);
  const RVector vr = model.hartree().convolve(rho);
  return N * model.lattice().cell_volume() * (w + 0.5 * vr).dot(rho);
}

// S(t) by the trapezoidal rule over the stored trajectory, which must start at
// t = 0, be uniformly sampled and contain t as a sample.
inline double scalar_phase(const MeanFieldModel &model, const MeanFieldTrajectory &traj,
                           double t, double N) {
  if (traj.empty()) throw std::invalid_argument("scalar_phase: empty trajectory");
  if (std::abs(traj.front().t) > 1e-12)
    throw std::invalid_argument("scalar_phase: trajectory must start at t = 0");
  if (t == 0.0) return 0.0;
  const double dt = traj.size() > 1 ? traj[1].t - traj[0].t : 0.0;
  if (!(dt > 0.0)) throw std::invalid_argument("scalar_phase: trajectory does not reach t");
  double S = 0.0;
  double prev = phase_integrand(model, traj.front(), N);
  for (std::size_t n = 1; n < traj.size(); ++n) {
    const double step = traj[n].t - traj[n - 1].t;
    if (std::abs(step - dt) > 1e-9 * dt) {
      std::ostringstream msg;
      msg << "scalar_phase: trajectory gap between t = " << traj[n - 1].t << " and " << traj[n].t;
      throw std::invalid_argument(msg.str());
    }
    const double cur = phase_integrand(model, traj[n], N);
    S += 0.5 * step * (prev + cur);
    prev = cur;
    if (std::abs(traj[n].t - t) <= 1e-9 * std::max(1.0, t)) return S;
    if (traj[n].t > t) break;
  }
  std::ostringstream msg;
  msg << "scalar_phase: t = " << t << " is not a sample of the trajectory";
  throw std::invalid_argument(msg.str());
}

// ---------------------------------------------------------------------------
// Fluctuation state

// e^{-iS} W*(sqrt(N) phi_t) Psi_t, with W* acting on the Fock factor.
inline CompositeState fluctuation_state(const FockBasis &b, const CompositeState &psi,
                                        const MeanFieldState &mf, double S,
                                        const KrylovOptions &opt = {60, 1e-13, 1e-12}) {
  check_coherent_tail(b, mf.phi, psi.N);
  const SparseOperator iA = displacement_generator(b, mode_amplitudes(mf.phi, psi.N));
  CompositeState out;
  out.N = psi.N;
  out.t = psi.t;
  out.amplitudes = std::exp(-I * S) * apply_weyl(iA, psi.amplitudes, -1, opt);
  return out;
}

// ---------------------------------------------------------------------------
// Generator

// derived: the form forced by W*HW + i(dW*)W + dS/dt, with w(x, X)(N|phi|^2 + a*a)
// in the diagonal part. displayed: (w(x, X) - w(x, X_t))(N|phi|^2 - a*a).
// displayed_flipped: (w(x, X) - w(x, X_t))(N|phi|^2 + a*a).
enum class GeneratorVariant { derived, displayed, displayed_flipped };

inline GeneratorVariant parse_generator_variant(const std::string &s) {
  if (s == "derived") return GeneratorVariant::derived;
  if (s == "displayed") return GeneratorVariant::displayed;
  if (s == "displayed_flipped") return GeneratorVariant::displayed_flipped;
  throw std::invalid_argument("unknown generator variant: " + s);
}

inline std::string to_string(GeneratorVariant v) {
  switch (v) {
    case GeneratorVariant::derived:
      return "derived";
    case GeneratorVariant::displayed:
      return "displayed";
    case GeneratorVariant::displayed_flipped:
      return "displayed_flipped";
  }
  return "?";
}

struct GeneratorParts {
  SparseOperator kinetic;  // -Delta_X / 2N + T_b
  SparseOperator diag;     // number-conserving interaction
  SparseOperator offdiag;  // linear, pairing and cubic terms
  SparseOperator quartic;  // (1/2N) sum v_jk n_j (n_k - delta_jk)
  double t = 0.0;
  GeneratorVariant variant = GeneratorVariant::derived;

  SparseOperator interaction() const { return SparseOperator(diag + offdiag); }
  SparseOperator total() const {
    SparseOperator s = kinetic;
    s += diag;
    s += offdiag;
    s += quartic;
    return s;
  }
};

inline void require_hermitian(const SparseOperator &op, const char *name) {
  const double scale = std::max(1.0, max_abs_entry(op));
  const double d = hermiticity_defect(op);
  if (d > 1e-12 * scale) {
    std::ostringstream msg;
    msg << "generator part '" << name << "' is not Hermitian (defect " << d << ")";
    throw std::logic_error(msg.str());
  }
}

// Linear, pairing and cubic Fock operators of the off-diagonal part that do not
// depend on the tracer position.
inline SparseOperator pairing_and_cubic(const FockBasis &b, const LadderSet &ops,
                                        const Eigen::MatrixXd &v, const CVector &phi, double hd,
                                        double N) {
  const int m = b.modes();
  SparseOperator half(b.dim(), b.dim());
  SparseOperator cubic(b.dim(), b.dim());
  for (int j = 0; j < m; ++j) {
    SparseOperator create_mix(b.dim(), b.dim()), field_mix(b.dim(), b.dim());
    for (int k = 0; k < m; ++k) {
      if (v(j, k) == 0.0) continue;
      create_mix += ops.create[k] * (v(j, k) * phi[k]);
      field_mix += SparseOperator(ops.create[k] * (v(j, k) * phi[k]) +
                                  ops.annihilate[k] * (v(j, k) * std::conj(phi[k])));
    }
    half += SparseOperator(ops.create[j] * create_mix) * (0.5 * hd * phi[j]);
    cubic += SparseOperator(SparseOperator(ops.create[j] * field_mix) * ops.annihilate[j]);
  }
  SparseOperator out = SparseOperator(half + SparseOperator(half.adjoint()));
  out += cubic * cplx(std::sqrt(hd / N));
  return out;
}

inline GeneratorParts assemble_generator(const MeanFieldModel &model, const FockBasis &b,
                                         double N, const MeanFieldState &mf,
                                         GeneratorVariant variant = GeneratorVariant::derived,
                                         const MicroOptions &opt = {}) {
  const LatticeConfig &cfg = model.lattice();
  const PotentialSpec &spec = model.potentials();
  check_lattice_basis(cfg, b);
  model.check_state(mf);
  if (!(N > 0.0)) throw std::invalid_argument("assemble_generator: N must be positive");
  const auto size = estimate_size(cfg, b, opt);
  if (size.bytes * (1.0 + b.modes()) > opt.memory_ceiling_bytes)
    throw std::invalid_argument("generator exceeds the memory ceiling: " + size.str());

  const Eigen::Index nx = size.tracer_dim, nf = b.dim();
  const int m = b.modes();
  const double hd = cfg.cell_volume();
  const CVector &phi = mf.phi.values;
  const RVector rho = density(mf.phi);
  const Eigen::MatrixXd v = pair_matrix(spec, cfg);
  const LadderSet ops(b);
  const SparseOperator idx = sparse_identity(nx), idf = sparse_identity(nf);
  const RVector w_t = w_total_on_lattice(spec, cfg, mf.X);

  GeneratorParts g;
  g.t = mf.t;
  g.variant = variant;

  g.kinetic = kron(tracer_kinetic(cfg, opt.tracer_kinetic) * cplx(1.0 / (2.0 * N)), idf);
  g.kinetic += kron(idx, one_body_operator(b, boson_kinetic_matrix(cfg).cast<cplx>()));

  // Diagonal part: tracer-dependent w block plus the Hartree and exchange terms.
  std::vector<RVector> blocks;
  blocks.reserve(static_cast<std::size_t>(nx));
  std::vector<RVector> dw(static_cast<std::size_t>(nx));
  for (Eigen::Index x = 0; x < nx; ++x) {
    const RVector w = w_total_on_lattice(spec, cfg, tracer_position(cfg, static_cast<std::size_t>(x)));
    dw[static_cast<std::size_t>(x)] = w - w_t;
    RVector block(nf);
    switch (variant) {
      case GeneratorVariant::derived:
        block = coupling_diagonal(b, w).array() + N * hd * w.dot(rho);
        break;
      case GeneratorVariant::displayed:
        block = -coupling_diagonal(b, w - w_t).array() + N * hd * (w - w_t).dot(rho);
        break;
      case GeneratorVariant::displayed_flipped:
        block = coupling_diagonal(b, w - w_t).array() + N * hd * (w - w_t).dot(rho);
        break;
    }
    blocks.push_back(std::move(block));
  }
  CMatrix exchange(m, m);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < m; ++j) exchange(k, j) = hd * v(k, j) * phi[k] * std::conj(phi[j]);
  SparseOperator fock_diag = one_body_operator(b, exchange);
  fock_diag += sparse_diagonal(coupling_diagonal(b, model.hartree().convolve(rho)).cast<cplx>());
  g.diag = tracer_diagonal(blocks);
  g.diag += kron(idx, fock_diag);

  // Off-diagonal part: sqrt(N h^d) sum_k (w_k(X) - w_k(X_t)) (conj(phi_k) a_k + phi_k a_k*).
  g.offdiag = kron(idx, pairing_and_cubic(b, ops, v, phi, hd, N));
  const double lin = std::sqrt(N * hd);
  for (int k = 0; k < m; ++k) {
    CVector c(nx);
    for (Eigen::Index x = 0; x < nx; ++x) c[x] = lin * dw[static_cast<std::size_t>(x)][k];
    if (c.cwiseAbs().maxCoeff() == 0.0 || phi[k] == cplx(0.0)) continue;
    const SparseOperator field = SparseOperator(ops.annihilate[k] * std::conj(phi[k]) +
                                                ops.create[k] * phi[k]);
    g.offdiag += kron(sparse_diagonal(c), field);
  }

  g.quartic = kron(idx, sparse_diagonal(pair_diagonal(b, v, 1.0 / (2.0 * N)).cast<cplx>()));

  for (auto *p : {&g.kinetic, &g.diag, &g.offdiag, &g.quartic}) p->makeCompressed();
  require_hermitian(g.kinetic, "kinetic");
  require_hermitian(g.diag, "diag");
  require_hermitian(g.offdiag, "offdiag");
  require_hermitian(g.quartic, "quartic");
  return g;
}

// chi(N_b <= M) on the composite space.
inline SparseOperator composite_cutoff(const FockBasis &b, Eigen::Index tracer_dim, int M) {
  return kron(sparse_identity(tracer_dim), number_cutoff(b, M));
}

struct TruncatedGenerator {
  SparseOperator op;
  double hermiticity_defect = 0.0;
};

// kinetic + chi(N_b <= M) I(t) + quartic, without symmetrisation.
inline TruncatedGenerator truncated_generator(const GeneratorParts &g, const FockBasis &b, int M) {
  if (M < 0) throw std::invalid_argument("truncated_generator: M must be >= 0");
  const Eigen::Index nx = g.kinetic.rows() / b.dim();
  TruncatedGenerator t;
  if (M >= b.n_max()) {
    t.op = g.total();
  } else {
    t.op = g.kinetic;
    t.op += SparseOperator(composite_cutoff(b, nx, M) * g.interaction());
    t.op += g.quartic;
  }
  t.op.makeCompressed();
  t.hermiticity_defect = hermiticity_defect(t.op);
  return t;
}

// || chi(N_b > M) I(t) Omega ||
inline double tail_norm(const GeneratorParts &g, const FockBasis &b, const CVector &omega, int M) {
  if (M < 0) throw std::invalid_argument("tail_norm: M must be >= 0");
  const CVector io = g.diag * omega + g.offdiag * omega;
  const auto cols = fock_columns(io, b.dim());
  const Eigen::Index first = M >= b.n_max() ? b.dim() : b.sector_end(M);
  return cols.bottomRows(b.dim() - first).norm();
}

// ---------------------------------------------------------------------------
// Generator identity

struct IdentityResidual {
  GeneratorVariant variant;
  double residual = 0.0;
};

struct GeneratorIdentityReport {
  double t = 0.0;
  double delta = 0.0;
  int interior = 0;
  int probes = 0;
  double scale = 0.0;  // max ||L Phi|| over probes, for context
  std::vector<IdentityResidual> residuals;
  GeneratorVariant adjudicated = GeneratorVariant::derived;

  double residual(GeneratorVariant v) const {
    for (const auto &r : residuals)
      if (r.variant == v) return r.residual;
    throw std::invalid_argument("variant not evaluated");
  }
};

// max over probes Phi = Pi Phi (Pi = chi(N_b <= interior)) of
// ||(L_variant - W*HW - i (dW*/dt) W - dS/dt) Phi|| / ||Phi||, with the time
// derivatives by central differences of width delta around the mean-field
// state `mf`, whose neighbours come from RK4.
inline GeneratorIdentityReport verify_generator_identity(
    const MeanFieldModel &model, const FockBasis &b, double N, const MeanFieldState &mf,
    double delta, int interior, int probes = 4, std::uint64_t seed = 17,
    const MicroOptions &opt = {}, const KrylovOptions &weyl_opt = {80, 1e-13, 1e-12}) {
  if (!(delta > 0.0)) throw std::invalid_argument("verify_generator_identity: delta must be > 0");
  if (interior < 0 || interior > b.n_max())
    throw std::invalid_argument("verify_generator_identity: interior level out of range");
  if (probes < 1) throw std::invalid_argument("verify_generator_identity: need probes");
  const LatticeConfig &cfg = model.lattice();
  check_coherent_tail(b, mf.phi, N);
  const int sub = std::max(8, static_cast<int>(std::ceil(delta / 1e-4)));
  const MeanFieldState plus = model.advance_rk4(mf, delta, sub);
  const MeanFieldState minus = model.advance_rk4(mf, -delta, sub);
  const SparseOperator h = assemble_hamiltonian(cfg, model.potentials(), b, N, opt);
  const SparseOperator iA0 = displacement_generator(b, mode_amplitudes(mf.phi, N));
  const SparseOperator iAp = displacement_generator(b, mode_amplitudes(plus.phi, N));
  const SparseOperator iAm = displacement_generator(b, mode_amplitudes(minus.phi, N));
  // derivative of the trapezoidal S across [t - delta, t + delta]
  const double sdot = 0.25 * (phase_integrand(model, minus, N) + 2.0 * phase_integrand(model, mf, N) +
                              phase_integrand(model, plus, N));

  const std::array<GeneratorVariant, 3> variants{GeneratorVariant::derived,
                                                 GeneratorVariant::displayed,
                                                 GeneratorVariant::displayed_flipped};
  std::vector<SparseOperator> gens;
  for (auto v : variants) gens.push_back(assemble_generator(model, b, N, mf, v, opt).total());

  GeneratorIdentityReport rep;
  rep.t = mf.t;
  rep.delta = delta;
  rep.interior = interior;
  rep.probes = probes;
  for (auto v : variants) rep.residuals.push_back({v, 0.0});

  std::mt19937_64 rng(seed);
  const Eigen::Index nx = h.rows() / b.dim();
  const Eigen::Index inner = b.sector_end(interior);
  for (int p = 0; p < probes; ++p) {
    CVector phi_probe = CVector::Zero(h.rows());
    {
      CVector r = random_vector(inner * nx, rng);
      auto cols = fock_columns(phi_probe, b.dim());
      cols.topRows(inner) = Eigen::Map<const CMatrix>(r.data(), inner, nx);
    }
    const CVector w = apply_weyl(iA0, phi_probe, +1, weyl_opt);
    CVector rhs = apply_weyl(iA0, CVector(h * w), -1, weyl_opt);
    rhs += (I / (2.0 * delta)) *
           (apply_weyl(iAp, w, -1, weyl_opt) - apply_weyl(iAm, w, -1, weyl_opt));
    rhs += sdot * phi_probe;
    for (std::size_t k = 0; k < variants.size(); ++k) {
      const CVector lhs = gens[k] * phi_probe;
      rep.scale = std::max(rep.scale, lhs.norm());
      rep.residuals[k].residual = std::max(rep.residuals[k].residual, (lhs - rhs).norm());
    }
  }
  rep.adjudicated = std::min_element(rep.residuals.begin(), rep.residuals.end(),
                                     [](const auto &a, const auto &c) { return a.residual < c.residual; })
                        ->variant;
  return rep;
}

// ---------------------------------------------------------------------------
// Gronwall diagnostic

struct GronwallSnapshot {
  double t = 0.0;
  double N = 1.0;
  std::vector<std::array<double, 2>> dx_moments;  // per component: ||dX Phi||^2, ||dX^3 Phi||^2
  std::vector<std::array<double, 2>> dv_moments;  // same for dV = P/N - V_t
  std::array<double, 2> nb_moments{};             // ||(N_b+1)^{1/2} Phi||^2, ||(N_b+1)^{3/2} Phi||^2
  double g_total = 0.0;

  double sum_dx(int p) const {
    double s = 0.0;
    for (const auto &m : dx_moments) s += m[p];
    return s;
  }
  double sum_dv(int p) const {
    double s = 0.0;
    for (const auto &m : dv_moments) s += m[p];
    return s;
  }
  double weighted_total() const {
    return sum_dx(1) + sum_dv(1) + (sum_dx(0) + sum_dv(0)) / (N * N) +
           (nb_moments[0] + nb_moments[1]) / (N * N * N);
  }
};

inline GronwallSnapshot gronwall_snapshot(const LatticeConfig &cfg, const FockBasis &b,
                                          const CompositeState &phi, const MeanFieldState &mf) {
  check_lattice_basis(cfg, b);
  const int axes = cfg.tracer_coords();
  if (static_cast<int>(mf.X.size()) != axes || static_cast<int>(mf.V.size()) != axes)
    throw std::invalid_argument("gronwall_snapshot: mean-field tracer size mismatch");
  const Eigen::Index nx = static_cast<Eigen::Index>(cfg.tracer_dim());
  if (phi.amplitudes.size() != nx * b.dim())
    throw std::invalid_argument("gronwall_snapshot: state size mismatch");
  GronwallSnapshot g;
  g.t = mf.t;
  g.N = phi.N;
  g.dx_moments.assign(axes, {0.0, 0.0});
  g.dv_moments.assign(axes, {0.0, 0.0});

  const RVector rho = tracer_density(phi.amplitudes, b.dim());
  for (Eigen::Index j = 0; j < nx; ++j) {
    const auto x = tracer_position(cfg, static_cast<std::size_t>(j));
    for (int a = 0; a < axes; ++a) {
      const double d = wrap(x[a] - mf.X[a], cfg.length);
      g.dx_moments[a][0] += rho[j] * d * d;
      g.dx_moments[a][1] += rho[j] * std::pow(d, 6);
    }
  }
  CMatrix rows = fock_columns(phi.amplitudes, b.dim()).transpose();
  for (Eigen::Index f = 0; f < rows.cols(); ++f) {
    CVector col = rows.col(f);
    fft_nd(col, cfg.tracer_sites, axes, true);
    rows.col(f) = col;
  }
  const RVector wk = rows.rowwise().squaredNorm() / static_cast<double>(nx);
  const auto mom = tracer_momenta(cfg);
  for (Eigen::Index j = 0; j < nx; ++j)
    for (int a = 0; a < axes; ++a) {
      const double d = mom[static_cast<std::size_t>(j)][a] / phi.N - mf.V[a];
      g.dv_moments[a][0] += wk[j] * d * d;
      g.dv_moments[a][1] += wk[j] * std::pow(d, 6);
    }

  const RVector n = number_diagonal(b);
  const RVector occ = fock_columns(phi.amplitudes, b.dim()).rowwise().squaredNorm();
  g.nb_moments[0] = occ.dot((n.array() + 1.0).matrix());
  g.nb_moments[1] = occ.dot((n.array() + 1.0).cube().matrix());
  g.g_total = g.weighted_total();
  return g;
}

// ---------------------------------------------------------------------------
// Truncated flow

struct TruncatedFlowOptions {
  int M = 0;
  double dt = 1e-2;
  int mf_substeps = 10;  // Strang steps per half step of the mean-field companion
  GeneratorVariant variant = GeneratorVariant::derived;
  MicroOptions micro{};
  KrylovOptions krylov{40, 1e-10, 1e-12};
};

struct TruncatedFlowStep {
  CompositeState state;
  MeanFieldState meanfield;
  double hermiticity_defect = 0.0;
};

// U^(M)(t, 0) Phi0 by the exponential midpoint rule: each step applies
// exp(-i dt L_M(t + dt/2)) through Arnoldi. Samples every dt_report.
inline std::vector<TruncatedFlowStep> truncated_flow(const MeanFieldModel &model,
                                                     const FockBasis &b,
                                                     const MeanFieldState &mf0,
                                                     const CompositeState &phi0, double T,
                                                     double dt_report,
                                                     const TruncatedFlowOptions &opt) {
  if (!(opt.dt > 0.0) || !(dt_report > 0.0) || T < 0.0 || opt.mf_substeps < 1)
    throw std::invalid_argument("truncated_flow: invalid step settings");
  const long per_report = std::lround(dt_report / opt.dt);
  const long reports = std::lround(T / dt_report);
  if (per_report < 1 || std::abs(per_report * opt.dt - dt_report) > 1e-9 * dt_report ||
      std::abs(reports * dt_report - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("truncated_flow: T, dt_report and dt must be commensurate");
  const double mf_dt = 0.5 * opt.dt / opt.mf_substeps;
  const auto mf = model.run(mf0, T, mf_dt, opt.mf_substeps);  // samples every dt/2

  std::vector<TruncatedFlowStep> out;
  out.push_back({phi0, mf0, 0.0});
  CompositeState s = phi0;
  double defect = 0.0;
  for (long n = 0; n < reports * per_report; ++n) {
    const MeanFieldState &mid = mf[static_cast<std::size_t>(2 * n + 1)];
    const auto parts = assemble_generator(model, b, s.N, mid, opt.variant, opt.micro);
    const auto lm = truncated_generator(parts, b, opt.M);
    defect = std::max(defect, lm.hermiticity_defect);
    auto mv = [&](const CVector &x) -> CVector { return lm.op * x; };
    s.amplitudes = expv_general(mv, s.amplitudes, opt.dt, opt.krylov);
    s.t = mf0.t + (n + 1) * opt.dt;
    if ((n + 1) % per_report == 0)
      out.push_back({s, mf[static_cast<std::size_t>(2 * (n + 1))], defect});
  }
  return out;
}

}  // namespace mflab

#endif  // MFLAB_FLUCTUATION_HPP
