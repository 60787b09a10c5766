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

#ifndef MFLAB_POTENTIALS_HPP
#define MFLAB_POTENTIALS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "lattice.hpp"

namespace mflab {

enum class TracerKernel { gaussian, cosine_bump, constant, table };
enum class BosonKernel { zero, constant, regularized_coulomb, table };

// Boson-tracer kernel w and boson-boson kernel v. Both are radial, hence even
// and real. Tables hold radial samples r_i = i * step.
struct PotentialSpec {
  TracerKernel w_kind = TracerKernel::gaussian;
  double w_amplitude = 1.0;
  double w_width = 1.0;
  std::vector<double> w_table;
  double w_table_step = 0.1;

  BosonKernel v_kind = BosonKernel::zero;
  double v_amplitude = 0.0;  // value of a constant v
  double v_lambda = 1.0;
  double v_epsilon = 0.5;
  double v_offset = 0.0;  // bounded part v_2 added to the regularized Coulomb term
  std::vector<double> v_table;
  double v_table_step = 0.1;

  void validate() const {
    if (w_kind == TracerKernel::gaussian || w_kind == TracerKernel::cosine_bump)
      if (!(w_width > 0.0)) throw std::invalid_argument("w.width must be positive");
    if (w_kind == TracerKernel::table && (w_table.size() < 2 || !(w_table_step > 0.0)))
      throw std::invalid_argument("w.table needs >= 2 samples and a positive step");
    if (v_kind == BosonKernel::regularized_coulomb && !(v_epsilon > 0.0 && v_epsilon < 1.0))
      throw std::invalid_argument("v.epsilon must lie in (0,1)");
    if (v_kind == BosonKernel::table && (v_table.size() < 2 || !(v_table_step > 0.0)))
      throw std::invalid_argument("v.table needs >= 2 samples and a positive step");
  }

  static PotentialSpec from_config(const KeyValueConfig &kv) {
    PotentialSpec s;
    const auto wk = kv.get_string("w.kind", "gaussian");
    if (wk == "gaussian") s.w_kind = TracerKernel::gaussian;
    else if (wk == "cosine_bump") s.w_kind = TracerKernel::cosine_bump;
    else if (wk == "constant") s.w_kind = TracerKernel::constant;
    else if (wk == "table") s.w_kind = TracerKernel::table;
    else throw std::invalid_argument("unknown w.kind: " + wk);
    s.w_amplitude = kv.get_double("w.amplitude", 1.0);
    s.w_width = kv.get_double("w.width", 1.0);
    if (s.w_kind == TracerKernel::table) {
      s.w_table = kv.get_doubles("w.table");
      s.w_table_step = kv.get_double("w.table_step");
    }

    const auto vk = kv.get_string("v.kind", "zero");
    if (vk == "zero") s.v_kind = BosonKernel::zero;
    else if (vk == "constant") s.v_kind = BosonKernel::constant;
    else if (vk == "regularized_coulomb") s.v_kind = BosonKernel::regularized_coulomb;
    else if (vk == "table") s.v_kind = BosonKernel::table;
    else throw std::invalid_argument("unknown v.kind: " + vk);
    s.v_amplitude = kv.get_double("v.amplitude", 0.0);
    s.v_lambda = kv.get_double("v.lambda", 1.0);
    s.v_epsilon = kv.get_double("v.epsilon", 0.5);
    s.v_offset = kv.get_double("v.offset", 0.0);
    if (s.v_kind == BosonKernel::table) {
      s.v_table = kv.get_doubles("v.table");
      s.v_table_step = kv.get_double("v.table_step");
    }
    s.validate();
    return s;
  }
};

namespace detail {

struct RadialSample {
  double value;
  double slope;  // d/dr
};

// Catmull-Rom interpolation of radial samples, mirrored at r = 0 so the slope
// vanishes there; constant beyond the last sample.
inline RadialSample radial_table(std::span<const double> f, double step, double r) {
  const double s = r / step;
  const auto n = static_cast<long>(f.size());
  if (s >= static_cast<double>(n - 1)) return {f.back(), 0.0};
  const long i = static_cast<long>(std::floor(s));
  const double u = s - static_cast<double>(i);
  auto at = [&](long k) {
    if (k < 0) k = -k;
    if (k > n - 1) k = n - 1;
    return f[static_cast<std::size_t>(k)];
  };
  const double p0 = at(i), p1 = at(i + 1);
  const double m0 = 0.5 * (at(i + 1) - at(i - 1));
  const double m1 = 0.5 * (at(i + 2) - at(i));
  const double u2 = u * u, u3 = u2 * u;
  const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
  const double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
  const double value = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1;
  const double dvalue = (6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 +
                        (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1;
  return {value, dvalue / step};
}

inline RadialSample w_radial(const PotentialSpec &s, double r) {
  switch (s.w_kind) {
    case TracerKernel::gaussian: {
      const double v = s.w_amplitude * std::exp(-r * r / (2.0 * s.w_width * s.w_width));
      return {v, -r / (s.w_width * s.w_width) * v};
    }
    case TracerKernel::cosine_bump: {
      // A cos^4(pi r / 2W) on r < W: three continuous derivatives at r = W.
      if (r >= s.w_width) return {0.0, 0.0};
      const double a = std::numbers::pi * r / (2.0 * s.w_width);
      const double c = std::cos(a), sn = std::sin(a);
      return {s.w_amplitude * c * c * c * c,
              -4.0 * s.w_amplitude * c * c * c * sn * std::numbers::pi / (2.0 * s.w_width)};
    }
    case TracerKernel::constant:
      return {s.w_amplitude, 0.0};
    case TracerKernel::table: {
      auto t = radial_table(s.w_table, s.w_table_step, r);
      return {s.w_amplitude * t.value, s.w_amplitude * t.slope};
    }
  }
  return {0.0, 0.0};
}

inline double norm(std::span<const double> r) {
  double s = 0.0;
  for (double x : r) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

// w at displacement r (already minimum-imaged).
inline double w_value(const PotentialSpec &s, std::span<const double> r) {
  return detail::w_radial(s, detail::norm(r)).value;
}

// grad w at displacement r.
inline std::vector<double> w_gradient(const PotentialSpec &s, std::span<const double> r) {
  const double rr = detail::norm(r);
  std::vector<double> g(r.size(), 0.0);
  if (rr == 0.0) return g;
  const double slope = detail::w_radial(s, rr).slope;
  for (std::size_t a = 0; a < r.size(); ++a) g[a] = slope * r[a] / rr;
  return g;
}

inline double v_value(const PotentialSpec &s, std::span<const double> r) {
  const double rr = detail::norm(r);
  switch (s.v_kind) {
    case BosonKernel::zero:
      return 0.0;
    case BosonKernel::constant:
      return s.v_amplitude;
    case BosonKernel::regularized_coulomb:
      return s.v_lambda / std::sqrt(s.v_epsilon * s.v_epsilon + rr * rr) + s.v_offset;
    case BosonKernel::table:
      return detail::radial_table(s.v_table, s.v_table_step, rr).value;
  }
  return 0.0;
}

inline std::vector<double> min_image(const LatticeConfig &cfg, std::span<const double> x,
                                     std::span<const double> y) {
  std::vector<double> r(x.size());
  for (std::size_t a = 0; a < x.size(); ++a) r[a] = wrap(x[a] - y[a], cfg.length);
  return r;
}

// w(x - X) for one tracer at X.
inline double eval_w(const PotentialSpec &s, const LatticeConfig &cfg,
                     std::span<const double> x, std::span<const double> tracer) {
  return w_value(s, min_image(cfg, x, tracer));
}

// Total boson-tracer interaction sum_l w(x - X^(l)); `tracers` holds
// tracer_count * dim coordinates, tracer-major.
inline double eval_w_total(const PotentialSpec &s, const LatticeConfig &cfg,
                           std::span<const double> x, std::span<const double> tracers) {
  const auto d = static_cast<std::size_t>(cfg.dim);
  double total = 0.0;
  for (std::size_t l = 0; l * d < tracers.size(); ++l)
    total += eval_w(s, cfg, x, tracers.subspan(l * d, d));
  return total;
}

// sum_l w(x_j - X^(l)) on every boson site.
inline RVector w_total_on_lattice(const PotentialSpec &s, const LatticeConfig &cfg,
                                  std::span<const double> tracers) {
  RVector out(static_cast<Eigen::Index>(cfg.modes()));
  for (std::size_t j = 0; j < cfg.modes(); ++j)
    out[static_cast<Eigen::Index>(j)] = eval_w_total(s, cfg, site_position(cfg, j), tracers);
  return out;
}

// Newton force -int grad_X w_total(x, X) rho(x) dx = h^d sum_j grad w(x_j - X^(l)) rho_j,
// using the analytic kernel gradient.
inline std::vector<double> coupling_force(const PotentialSpec &s, const LatticeConfig &cfg,
                                          std::span<const double> tracers,
                                          const RVector &density) {
  const auto d = static_cast<std::size_t>(cfg.dim);
  std::vector<double> force(tracers.size(), 0.0);
  for (std::size_t j = 0; j < cfg.modes(); ++j) {
    const double rho = density[static_cast<Eigen::Index>(j)];
    if (rho == 0.0) continue;
    const auto x = site_position(cfg, j);
    for (std::size_t l = 0; l * d < tracers.size(); ++l) {
      const auto g = w_gradient(s, min_image(cfg, x, tracers.subspan(l * d, d)));
      for (std::size_t a = 0; a < d; ++a) force[l * d + a] += cfg.cell_volume() * g[a] * rho;
    }
  }
  return force;
}

// v(x_j - x_0) on the boson lattice, minimum image.
inline RVector v_kernel(const PotentialSpec &s, const LatticeConfig &cfg) {
  RVector k(static_cast<Eigen::Index>(cfg.modes()));
  const std::vector<double> origin(static_cast<std::size_t>(cfg.dim), 0.0);
  for (std::size_t j = 0; j < cfg.modes(); ++j)
    k[static_cast<Eigen::Index>(j)] = v_value(s, min_image(cfg, site_position(cfg, j), origin));
  return k;
}

// Precomputed transform of v for repeated circular convolutions.
class HartreeKernel {
 public:
  HartreeKernel(const PotentialSpec &s, const LatticeConfig &cfg)
      : cfg_(cfg), kernel_(v_kernel(s, cfg)), zero_(s.v_kind == BosonKernel::zero) {
    hat_ = kernel_.cast<cplx>();
    fft_nd(hat_, cfg.sites, cfg.dim, true);
  }

  const RVector &kernel() const { return kernel_; }
  bool is_zero() const { return zero_; }

  // (v * rho)_j = h^d sum_k v(x_j - x_k) rho_k
  RVector convolve(const RVector &rho) const {
    if (zero_) return RVector::Zero(rho.size());
    CVector r = rho.cast<cplx>();
    fft_nd(r, cfg_.sites, cfg_.dim, true);
    r.array() *= hat_.array();
    fft_nd(r, cfg_.sites, cfg_.dim, false);
    return cfg_.cell_volume() * r.real();
  }

 private:
  LatticeConfig cfg_;
  RVector kernel_;
  CVector hat_;
  bool zero_;
};

inline RVector density(const GridField &phi) { return phi.values.cwiseAbs2(); }

// v * rho as a (real-valued) grid field.
inline GridField hartree_convolution(const PotentialSpec &s, const GridField &rho) {
  const RVector r = rho.values.real();
  if (r.minCoeff() < -1e-12)
    throw std::invalid_argument("hartree_convolution: density must be nonnegative");
  if (rho.values.imag().cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("hartree_convolution: density must be real");
  HartreeKernel k(s, rho.cfg);
  return GridField(rho.cfg, k.convolve(r).cast<cplx>());
}

// Smooth random field built from a fixed set of continuum Fourier modes, so
// the same draw can be sampled on lattices of different resolution.
inline GridField random_smooth_field(const LatticeConfig &cfg, std::mt19937_64 &rng,
                                     int max_wavenumber) {
  std::normal_distribution<double> g(0.0, 1.0);
  const int span = 2 * max_wavenumber + 1;
  const std::size_t count = LatticeConfig::ipow(span, cfg.dim);
  std::vector<std::vector<int>> wavevectors;
  std::vector<cplx> coeffs;
  for (std::size_t m = 0; m < count; ++m) {
    auto idx = unflatten(m, span, cfg.dim);
    double k2 = 0.0;
    for (auto &v : idx) {
      v -= max_wavenumber;
      k2 += static_cast<double>(v * v);
    }
    const double a = 1.0 / (1.0 + k2);
    wavevectors.push_back(idx);
    coeffs.emplace_back(a * g(rng), a * g(rng));
  }
  GridField f(cfg);
  for (std::size_t j = 0; j < cfg.modes(); ++j) {
    const auto x = site_position(cfg, j);
    cplx s = 0.0;
    for (std::size_t m = 0; m < count; ++m) {
      double phase = 0.0;
      for (int a = 0; a < cfg.dim; ++a)
        phase += 2.0 * std::numbers::pi * wavevectors[m][a] * x[a] / cfg.length;
      s += coeffs[m] * std::exp(I * phase);
    }
    f[static_cast<Eigen::Index>(j)] = s;
  }
  return f;
}

// Empirical constants for the standard potential estimates.
struct FundamentalEstimatesReport {
  double taylor_w = 0.0;       // sup |w(a)-w(b)| / |a-b|
  double taylor_grad_w = 0.0;  // sup |grad w(a) - grad w(b)| / |a-b|
  std::vector<double> v_estimate;  // sup_x h^d sum_y v^2 |phi|^2 / ||phi||_{H1}^2 per sample
  std::vector<double> lipschitz;   // ||J(phi)-J(psi)||_{H1} / ((||phi||^2+||psi||^2)_{H1} ||phi-psi||_{H1})
  std::vector<double> lipschitz_numerator;

  double max_v_estimate() const {
    return v_estimate.empty() ? 0.0 : *std::max_element(v_estimate.begin(), v_estimate.end());
  }
  double max_lipschitz() const {
    return lipschitz.empty() ? 0.0 : *std::max_element(lipschitz.begin(), lipschitz.end());
  }
  bool all_finite() const {
    auto ok = [](double x) { return std::isfinite(x); };
    return ok(taylor_w) && ok(taylor_grad_w) && std::all_of(v_estimate.begin(), v_estimate.end(), ok) &&
           std::all_of(lipschitz.begin(), lipschitz.end(), ok);
  }
};

struct FieldPair {
  GridField phi;
  GridField psi;
};

// J(phi) = (v * |phi|^2) phi
inline GridField hartree_nonlinearity(const HartreeKernel &k, const GridField &phi) {
  const RVector pot = k.convolve(density(phi));
  return GridField(phi.cfg, (pot.cast<cplx>().array() * phi.values.array()).matrix());
}

inline FundamentalEstimatesReport check_fundamental_estimates(
    const PotentialSpec &s, const LatticeConfig &cfg, const std::vector<FieldPair> &samples,
    int point_pairs = 2000, std::uint64_t seed = 7) {
  FundamentalEstimatesReport rep;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5 * cfg.length, 0.5 * cfg.length);
  const auto d = static_cast<std::size_t>(cfg.dim);
  for (int p = 0; p < point_pairs; ++p) {
    std::vector<double> a(d), b(d);
    for (auto &x : a) x = u(rng);
    for (std::size_t i = 0; i < d; ++i) b[i] = a[i] + 0.05 * u(rng);
    const double dist = detail::norm(min_image(cfg, a, b));
    if (dist == 0.0) continue;
    const auto ra = min_image(cfg, a, std::vector<double>(d, 0.0));
    const auto rb = min_image(cfg, b, std::vector<double>(d, 0.0));
    rep.taylor_w = std::max(rep.taylor_w, std::abs(w_value(s, ra) - w_value(s, rb)) / dist);
    const auto ga = w_gradient(s, ra), gb = w_gradient(s, rb);
    double gd = 0.0;
    for (std::size_t i = 0; i < d; ++i) gd += (ga[i] - gb[i]) * (ga[i] - gb[i]);
    rep.taylor_grad_w = std::max(rep.taylor_grad_w, std::sqrt(gd) / dist);
  }

  HartreeKernel k(s, cfg);
  RVector kernel_sq = k.kernel().cwiseAbs2();
  CVector hat_sq = kernel_sq.cast<cplx>();
  fft_nd(hat_sq, cfg.sites, cfg.dim, true);

  for (const auto &pair : samples) {
    for (const auto *f : {&pair.phi, &pair.psi}) {
      if (f->values.cwiseAbs().maxCoeff() == 0.0)
        throw std::invalid_argument("check_fundamental_estimates: zero sample field");
    }
    // sup_x h^d sum_y v(x-y)^2 |phi(y)|^2 / ||phi||_{H1}^2
    CVector r = density(pair.phi).cast<cplx>();
    fft_nd(r, cfg.sites, cfg.dim, true);
    r.array() *= hat_sq.array();
    fft_nd(r, cfg.sites, cfg.dim, false);
    const double sup = cfg.cell_volume() * r.real().maxCoeff();
    rep.v_estimate.push_back(sup / norm_h1_sq(pair.phi));

    const GridField jd(cfg, hartree_nonlinearity(k, pair.phi).values -
                                hartree_nonlinearity(k, pair.psi).values);
    const GridField diff(cfg, pair.phi.values - pair.psi.values);
    const double num = norm_h1(jd);
    const double den = (norm_h1_sq(pair.phi) + norm_h1_sq(pair.psi)) * norm_h1(diff);
    rep.lipschitz_numerator.push_back(num);
    rep.lipschitz.push_back(den == 0.0 ? 0.0 : num / den);
  }
  return rep;
}

}  // namespace mflab

#endif  // MFLAB_POTENTIALS_HPP
