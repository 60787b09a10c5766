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

#ifndef MFLAB_MEANFIELD_HPP
#define MFLAB_MEANFIELD_HPP

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "lattice.hpp"
#include "potentials.hpp"

namespace mflab {

// Classical tracer coordinates (tracer-major, dim components each), their
// velocities, and the condensate wave function at time t.
struct MeanFieldState {
  std::vector<double> X;
  std::vector<double> V;
  GridField phi;
  double t = 0.0;
};

using MeanFieldTrajectory = std::vector<MeanFieldState>;

struct EnergyBreakdown {
  double kinetic_tracer = 0.0;  // |V|^2 / 2
  double h1_boson = 0.0;        // ||phi||_{H1}^2
  double pair = 0.0;            // 1/2 <|phi|^2, v * |phi|^2>
  double coupling = 0.0;        // <w_total, |phi|^2>
  double total = 0.0;
};

// Everything needed to evaluate the coupled Newton-Hartree vector field.
class MeanFieldModel {
 public:
  MeanFieldModel(LatticeConfig cfg, PotentialSpec spec,
                 KineticSymbol symbol = KineticSymbol::finite_difference)
      : cfg_(cfg), spec_(std::move(spec)), symbol_(symbol), hartree_(spec_, cfg_),
        omega_(kinetic_symbol(cfg_, symbol_)) {
    cfg_.validate();
    spec_.validate();
  }

  const LatticeConfig &lattice() const { return cfg_; }
  const PotentialSpec &potentials() const { return spec_; }
  KineticSymbol symbol() const { return symbol_; }
  const HartreeKernel &hartree() const { return hartree_; }

  void check_state(const MeanFieldState &s) const {
    const auto n = static_cast<std::size_t>(cfg_.tracer_coords());
    if (s.X.size() != n || s.V.size() != n)
      throw std::invalid_argument("mean-field state: tracer coordinate count mismatch");
    if (!(s.phi.cfg == cfg_)) throw std::invalid_argument("mean-field state: lattice mismatch");
  }

  // w_total(x_j, X) + (v * |phi|^2)(x_j)
  RVector boson_potential(const std::vector<double> &X, const GridField &phi) const {
    return w_total_on_lattice(spec_, cfg_, X) + hartree_.convolve(density(phi));
  }

  std::vector<double> force(const std::vector<double> &X, const GridField &phi) const {
    return coupling_force(spec_, cfg_, X, density(phi));
  }

  EnergyBreakdown energy(const MeanFieldState &s) const {
    check_state(s);
    EnergyBreakdown e;
    for (double v : s.V) e.kinetic_tracer += 0.5 * v * v;
    e.h1_boson = h1_energy(s.phi, symbol_);
    const RVector rho = density(s.phi);
    e.pair = 0.5 * cfg_.cell_volume() * hartree_.convolve(rho).dot(rho);
    e.coupling = cfg_.cell_volume() * w_total_on_lattice(spec_, cfg_, s.X).dot(rho);
    e.total = e.kinetic_tracer + e.h1_boson + e.pair + e.coupling;
    return e;
  }

  // Free boson propagator e^{i Delta t} under the model's symbol.
  GridField free_propagate(const GridField &phi, double t) const {
    CVector m(omega_.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = std::exp(-I * omega_[i] * t);
    return apply_fourier_multiplier(phi, m);
  }

  // One symmetric step: kick/2, drift/2, kinetic/2 - potential - kinetic/2,
  // drift/2, kick/2. Each boson substep is a unit-modulus multiplier.
  MeanFieldState step_strang(const MeanFieldState &in, double dt) const {
    if (!(dt != 0.0) || !std::isfinite(dt))
      throw std::invalid_argument("step_strang: dt must be finite and nonzero");
    MeanFieldState s = in;
    const CVector half = [&] {
      CVector m(omega_.size());
      for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = std::exp(-I * omega_[i] * (0.5 * dt));
      return m;
    }();
    kick(s, 0.5 * dt);
    drift(s, 0.5 * dt);
    s.phi = apply_fourier_multiplier(s.phi, half);
    const RVector pot = boson_potential(s.X, s.phi);
    for (Eigen::Index j = 0; j < pot.size(); ++j) s.phi[j] *= std::exp(-I * pot[j] * dt);
    s.phi = apply_fourier_multiplier(s.phi, half);
    drift(s, 0.5 * dt);
    kick(s, 0.5 * dt);
    s.t = in.t + dt;
    return s;
  }

  // Time derivative of (X, V, phi) for the lattice equations.
  struct Derivative {
    std::vector<double> dX;
    std::vector<double> dV;
    CVector dphi;
  };

  Derivative rhs(const MeanFieldState &s) const {
    Derivative d;
    d.dX = s.V;
    d.dV = force(s.X, s.phi);
    CVector hat = s.phi.values;
    fft_nd(hat, cfg_.sites, cfg_.dim, true);
    hat.array() *= omega_.cast<cplx>().array();
    fft_nd(hat, cfg_.sites, cfg_.dim, false);
    const RVector pot = boson_potential(s.X, s.phi);
    d.dphi = -I * (hat + (pot.cast<cplx>().array() * s.phi.values.array()).matrix());
    return d;
  }

  // Classical fourth-order Runge-Kutta step; used where a high-order local
  // reference is wanted (short shifts of the mean-field state).
  MeanFieldState step_rk4(const MeanFieldState &s, double dt) const {
    auto axpy = [&](const MeanFieldState &base, const Derivative &d, double h) {
      MeanFieldState o = base;
      for (std::size_t i = 0; i < o.X.size(); ++i) {
        o.X[i] += h * d.dX[i];
        o.V[i] += h * d.dV[i];
      }
      o.phi.values += h * d.dphi;
      return o;
    };
    const Derivative k1 = rhs(s);
    const Derivative k2 = rhs(axpy(s, k1, 0.5 * dt));
    const Derivative k3 = rhs(axpy(s, k2, 0.5 * dt));
    const Derivative k4 = rhs(axpy(s, k3, dt));
    MeanFieldState o = s;
    for (std::size_t i = 0; i < o.X.size(); ++i) {
      o.X[i] += dt / 6.0 * (k1.dX[i] + 2 * k2.dX[i] + 2 * k3.dX[i] + k4.dX[i]);
      o.V[i] += dt / 6.0 * (k1.dV[i] + 2 * k2.dV[i] + 2 * k3.dV[i] + k4.dV[i]);
    }
    o.phi.values += dt / 6.0 * (k1.dphi + 2 * k2.dphi + 2 * k3.dphi + k4.dphi);
    o.t = s.t + dt;
    return o;
  }

  // Shift a state by `dt` using `substeps` RK4 steps.
  MeanFieldState advance_rk4(const MeanFieldState &s, double dt, int substeps) const {
    MeanFieldState o = s;
    for (int i = 0; i < substeps; ++i) o = step_rk4(o, dt / substeps);
    o.t = s.t + dt;
    return o;
  }

  // Strang integration over [t0, t0+T]; records every `record_every` steps
  // (always including both ends).
  MeanFieldTrajectory run(const MeanFieldState &initial, double T, double dt,
                          int record_every = 1) const {
    check_state(initial);
    if (!(dt > 0.0)) throw std::invalid_argument("run: dt must be positive");
    if (T < 0.0) throw std::invalid_argument("run: T must be nonnegative");
    const long steps = std::lround(T / dt);
    if (std::abs(steps * dt - T) > 1e-9 * std::max(1.0, T))
      throw std::invalid_argument("run: T must be a multiple of dt");
    MeanFieldTrajectory traj{initial};
    MeanFieldState s = initial;
    for (long n = 1; n <= steps; ++n) {
      s = step_strang(s, dt);
      s.t = initial.t + n * dt;
      if (n % record_every == 0 || n == steps) traj.push_back(s);
    }
    return traj;
  }

 private:
  void kick(MeanFieldState &s, double h) const {
    const auto f = force(s.X, s.phi);
    for (std::size_t i = 0; i < s.V.size(); ++i) s.V[i] += h * f[i];
  }
  static void drift(MeanFieldState &s, double h) {
    for (std::size_t i = 0; i < s.X.size(); ++i) s.X[i] += h * s.V[i];
  }

  LatticeConfig cfg_;
  PotentialSpec spec_;
  KineticSymbol symbol_;
  HartreeKernel hartree_;
  RVector omega_;
};

// ---------------------------------------------------------------------------
// Initial data

inline GridField gaussian_field(const LatticeConfig &cfg, const std::vector<double> &center,
                                double width, const std::vector<double> &momentum,
                                double target_norm = 1.0) {
  GridField f(cfg);
  for (std::size_t j = 0; j < cfg.modes(); ++j) {
    const auto x = site_position(cfg, j);
    double r2 = 0.0, ph = 0.0;
    for (int a = 0; a < cfg.dim; ++a) {
      const double dx = wrap(x[a] - center[a], cfg.length);
      r2 += dx * dx;
      ph += momentum[a] * x[a];
    }
    f[static_cast<Eigen::Index>(j)] = std::exp(-r2 / (4.0 * width * width)) * std::exp(I * ph);
  }
  const double n = norm_l2(f);
  if (n > 0.0) f.values *= target_norm / n;
  return f;
}

// e^{2 pi i m.j/K} / sqrt(L^d): a unit-norm lattice plane wave.
inline GridField plane_wave(const LatticeConfig &cfg, const std::vector<int> &mode) {
  GridField f(cfg);
  const double amp = 1.0 / std::sqrt(std::pow(cfg.length, cfg.dim));
  for (std::size_t j = 0; j < cfg.modes(); ++j) {
    auto idx = unflatten(j, cfg.sites, cfg.dim);
    double ph = 0.0;
    for (int a = 0; a < cfg.dim; ++a)
      ph += 2.0 * std::numbers::pi * mode[a] * idx[a] / cfg.sites;
    f[static_cast<Eigen::Index>(j)] = amp * std::exp(I * ph);
  }
  return f;
}

// Reads X0, V0 and the phi.* keys.
inline MeanFieldState initial_state_from_config(const LatticeConfig &cfg,
                                                const KeyValueConfig &kv) {
  MeanFieldState s;
  const auto n = static_cast<std::size_t>(cfg.tracer_coords());
  s.X = kv.get_doubles("X0", std::vector<double>(n, 0.5 * cfg.length));
  s.V = kv.get_doubles("V0", std::vector<double>(n, 0.0));
  if (s.X.size() != n || s.V.size() != n)
    throw std::invalid_argument("X0/V0 need tracer_count*dim components");
  const auto kind = kv.get_string("phi.kind", "gaussian");
  const auto d = static_cast<std::size_t>(cfg.dim);
  if (kind == "gaussian") {
    auto c = kv.get_doubles("phi.center", std::vector<double>(d, 0.5 * cfg.length));
    auto p = kv.get_doubles("phi.momentum", std::vector<double>(d, 0.0));
    if (c.size() != d || p.size() != d)
      throw std::invalid_argument("phi.center/phi.momentum need dim components");
    s.phi = gaussian_field(cfg, c, kv.get_double("phi.width", 1.0), p,
                           kv.get_double("phi.norm", 1.0));
  } else if (kind == "plane_wave") {
    auto m = kv.get_doubles("phi.mode", std::vector<double>(d, 0.0));
    std::vector<int> mode;
    for (double v : m) mode.push_back(static_cast<int>(std::lround(v)));
    if (mode.size() != d) throw std::invalid_argument("phi.mode needs dim components");
    s.phi = plane_wave(cfg, mode);
  } else if (kind == "zero") {
    s.phi = GridField(cfg);
  } else {
    throw std::invalid_argument("unknown phi.kind: " + kind);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Picard fixed-point oracle for the mild (Duhamel) form of the equations.

struct PicardResult {
  MeanFieldTrajectory trajectory;
  std::vector<double> distances;  // sup-in-time distance between successive iterates
};

// sup_t (|X - X'| + |V - V'| + ||phi - phi'||_{H1})
inline double trajectory_distance(const MeanFieldTrajectory &a, const MeanFieldTrajectory &b,
                                  KineticSymbol symbol) {
  double d = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    double dx = 0.0, dv = 0.0;
    for (std::size_t i = 0; i < a[n].X.size(); ++i) {
      dx += std::pow(a[n].X[i] - b[n].X[i], 2);
      dv += std::pow(a[n].V[i] - b[n].V[i], 2);
    }
    d = std::max(d, std::sqrt(dx) + std::sqrt(dv) + h1_distance(a[n].phi, b[n].phi, symbol));
  }
  return d;
}

// Iterates (X,V,phi) -> (M1,M2,M3) on a uniform grid of `steps` intervals with
// trapezoidal time quadrature. Zero iterations returns the constant anchor.
inline PicardResult picard_solve(const MeanFieldModel &model, const MeanFieldState &initial,
                                 double T, int steps, int iterations) {
  model.check_state(initial);
  if (steps < 1) throw std::invalid_argument("picard_solve: need at least one time step");
  if (iterations < 0) throw std::invalid_argument("picard_solve: negative iteration count");
  const double dt = T / steps;
  const auto& cfg = model.lattice();
  PicardResult res;
  MeanFieldTrajectory cur(static_cast<std::size_t>(steps + 1), initial);
  for (int n = 0; n <= steps; ++n) cur[n].t = initial.t + n * dt;

  for (int it = 0; it < iterations; ++it) {
    MeanFieldTrajectory next = cur;
    std::vector<double> Xacc(initial.X.size(), 0.0), Vacc(initial.V.size(), 0.0);
    CVector Gacc = CVector::Zero(initial.phi.size());
    std::vector<double> prevF;
    CVector prevH;
    for (int n = 0; n <= steps; ++n) {
      const auto &s = cur[n];
      const double tn = n * dt;
      const auto F = model.force(s.X, s.phi);
      const RVector pot = model.boson_potential(s.X, s.phi);
      GridField G(cfg, (pot.cast<cplx>().array() * s.phi.values.array()).matrix());
      const CVector H = model.free_propagate(G, -tn).values;  // U(-s) G(s)
      if (n > 0) {
        for (std::size_t i = 0; i < Xacc.size(); ++i) {
          Xacc[i] += 0.5 * dt * (cur[n - 1].V[i] + s.V[i]);
          Vacc[i] += 0.5 * dt * (prevF[i] + F[i]);
        }
        Gacc += 0.5 * dt * (prevH + H);
      }
      prevF = F;
      prevH = H;
      for (std::size_t i = 0; i < Xacc.size(); ++i) {
        next[n].X[i] = initial.X[i] + Xacc[i];
        next[n].V[i] = initial.V[i] + Vacc[i];
      }
      GridField inner_sum(cfg, initial.phi.values - I * Gacc);
      next[n].phi = model.free_propagate(inner_sum, tn);
    }
    const double dist = trajectory_distance(cur, next, model.symbol());
    if (res.distances.size() >= 2 && dist > res.distances.back() * (1.0 + 1e-9) &&
        dist > 1e-10)
      throw std::runtime_error("picard_solve: iterates are not contracting (distance " +
                               std::to_string(dist) + " after " +
                               std::to_string(res.distances.back()) +
                               "); horizon T too long");
    res.distances.push_back(dist);
    cur = std::move(next);
  }
  res.trajectory = std::move(cur);
  return res;
}

// Rough a-priori contraction horizon min{1/C1, 1/(4 C2)} / (1 + M^2) with
// constants assembled from empirical kernel norms. Reported, not enforced:
// picard_solve detects non-contraction directly.
inline double estimate_contraction_horizon(const MeanFieldModel &model,
                                           const MeanFieldState &s, double mu) {
  const auto &cfg = model.lattice();
  const auto &spec = model.potentials();
  const auto e = model.energy(s);
  const double mass = std::pow(norm_l2(s.phi), 2);
  const double M2 = mu * (e.total + mass + mass * mass * mass);
  double w0 = 0.0, w1 = 0.0, w2 = 0.0;
  const int samples = 512;
  const double dr = 0.5 * cfg.length / samples;
  for (int i = 0; i <= samples; ++i) {
    const double r = i * dr;
    const auto a = detail::w_radial(spec, r);
    const auto b = detail::w_radial(spec, r + 1e-4);
    w0 = std::max(w0, std::abs(a.value));
    w1 = std::max(w1, std::abs(a.slope));
    w2 = std::max(w2, std::abs(b.slope - a.slope) / 1e-4);
  }
  const double vsup = model.hartree().kernel().cwiseAbs().maxCoeff();
  const double c1 = vsup + 2.0 * (w0 + w1);
  const double c2 = 1.0 + vsup + 3.0 * (w0 + w1 + w2);
  return std::min(1.0 / c1, 1.0 / (4.0 * c2)) / (1.0 + std::max(M2, 0.0));
}

// ---------------------------------------------------------------------------
// Conservation diagnostics

struct ConservationReport {
  double mass_drift = 0.0;    // max |‖phi_t‖ - ‖phi_0‖| / ‖phi_0‖
  double energy_drift = 0.0;  // max |E(t) - E(0)| / (1 + |E(0)|)
};

inline ConservationReport conservation_report(const MeanFieldModel &model,
                                              const MeanFieldTrajectory &traj) {
  ConservationReport r;
  if (traj.empty()) return r;
  const double m0 = norm_l2(traj.front().phi);
  const double e0 = model.energy(traj.front()).total;
  for (const auto &s : traj) {
    const double m = norm_l2(s.phi);
    r.mass_drift = std::max(r.mass_drift, m0 > 0.0 ? std::abs(m - m0) / m0 : std::abs(m));
    r.energy_drift =
        std::max(r.energy_drift, std::abs(model.energy(s).total - e0) / (1.0 + std::abs(e0)));
  }
  return r;
}

// mu such that V^2 + ||phi||_{H1}^2 <= mu (E + ||phi||^2 + ||phi||^6), fitted at
// one state and inflated by `safety`. Empty when the right side is not positive.
inline std::optional<double> fit_energy_mu(const MeanFieldModel &model, const MeanFieldState &s,
                                           double safety = 2.0) {
  const auto e = model.energy(s);
  const double mass = std::pow(norm_l2(s.phi), 2);
  const double rhs = e.total + mass + mass * mass * mass;
  if (!(rhs > 0.0)) return std::nullopt;
  return safety * (2.0 * e.kinetic_tracer + e.h1_boson) / rhs;
}

inline bool energy_bound_holds(const MeanFieldModel &model, const MeanFieldState &s, double mu) {
  const auto e = model.energy(s);
  const double mass = std::pow(norm_l2(s.phi), 2);
  return 2.0 * e.kinetic_tracer + e.h1_boson <= mu * (e.total + mass + mass * mass * mass);
}

}  // namespace mflab

#endif  // MFLAB_MEANFIELD_HPP
