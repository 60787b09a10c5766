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

#ifndef MFLAB_LATTICE_HPP
#define MFLAB_LATTICE_HPP

#include <unsupported/Eigen/FFT>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "sparse.hpp"

namespace mflab {

// finite_difference: three-point stencil; finite_difference_8: nine-point
// eighth-order stencil; spectral: exact |k|^2 on the resolved band.
enum class KineticSymbol { finite_difference, finite_difference_8, spectral };

inline KineticSymbol parse_kinetic_symbol(const std::string &s) {
  if (s == "fd" || s == "finite_difference") return KineticSymbol::finite_difference;
  if (s == "fd8" || s == "finite_difference_8") return KineticSymbol::finite_difference_8;
  if (s == "spectral") return KineticSymbol::spectral;
  throw std::invalid_argument("unknown kinetic symbol: " + s);
}

enum class LaplacianTarget { boson, tracer };

// Periodic torus [0, L)^d shared by the boson field and the tracer(s). Boson
// sites sit at x_j = j h, tracer sites at X_j = j h_X.
struct LatticeConfig {
  int dim = 1;
  double length = 1.0;
  int sites = 4;
  int tracer_sites = 4;
  int tracer_count = 1;

  double spacing() const { return length / sites; }
  double tracer_spacing() const { return length / tracer_sites; }
  // h^d, the quadrature weight of one boson site.
  double cell_volume() const { return std::pow(spacing(), dim); }
  double tracer_cell_volume() const {
    return std::pow(tracer_spacing(), dim * tracer_count);
  }
  std::size_t modes() const { return ipow(sites, dim); }
  int tracer_coords() const { return dim * tracer_count; }
  std::size_t tracer_dim() const { return ipow(tracer_sites, tracer_coords()); }

  void validate() const {
    if (dim < 1 || dim > 3)
      throw std::invalid_argument("lattice: dim must be 1, 2 or 3");
    if (!(length > 0.0) || !std::isfinite(length))
      throw std::invalid_argument("lattice: length must be positive");
    // Boson sites may be 2 (tiny two-mode models); tracer sites need >= 4.
    if (sites < 2 || sites % 2 != 0)
      throw std::invalid_argument("lattice: sites must be even and >= 2");
    if (tracer_sites < 4 || tracer_sites % 2 != 0)
      throw std::invalid_argument("lattice: tracer_sites must be even and >= 4");
    if (tracer_count < 1)
      throw std::invalid_argument("lattice: tracer_count must be >= 1");
    if (modes() < 2) throw std::invalid_argument("lattice: need at least two modes");
  }

  bool operator==(const LatticeConfig &) const = default;

  static LatticeConfig from_config(const KeyValueConfig &kv) {
    LatticeConfig c;
    c.dim = static_cast<int>(kv.get_int("dim", 1));
    c.length = kv.get_double("length");
    c.sites = static_cast<int>(kv.get_int("sites"));
    c.tracer_sites = static_cast<int>(kv.get_int("tracer_sites", c.sites));
    c.tracer_count = static_cast<int>(kv.get_int("tracer_count", 1));
    c.validate();
    return c;
  }

  static std::size_t ipow(int base, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
    return r;
  }
};

// Minimum-image representative of a displacement on a circle of length L.
inline double wrap(double dx, double length) {
  return dx - length * std::round(dx / length);
}

// Multi-index of a flat index on an n-axis grid with k points per axis; axis 0
// is the fastest.
inline std::vector<int> unflatten(std::size_t flat, int k, int axes) {
  std::vector<int> idx(static_cast<std::size_t>(axes));
  for (int a = 0; a < axes; ++a) {
    idx[a] = static_cast<int>(flat % static_cast<std::size_t>(k));
    flat /= static_cast<std::size_t>(k);
  }
  return idx;
}

inline std::size_t flatten(const std::vector<int> &idx, int k) {
  std::size_t flat = 0;
  for (int a = static_cast<int>(idx.size()) - 1; a >= 0; --a)
    flat = flat * static_cast<std::size_t>(k) + static_cast<std::size_t>(idx[a]);
  return flat;
}

// Position of boson site j (dim components).
inline std::vector<double> site_position(const LatticeConfig &cfg, std::size_t j) {
  auto idx = unflatten(j, cfg.sites, cfg.dim);
  std::vector<double> x(idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a) x[a] = idx[a] * cfg.spacing();
  return x;
}

// Coordinates of tracer lattice point j: tracer_count * dim components,
// tracer-major (X^(1)_1..X^(1)_d, X^(2)_1, ...).
inline std::vector<double> tracer_position(const LatticeConfig &cfg, std::size_t j) {
  auto idx = unflatten(j, cfg.tracer_sites, cfg.tracer_coords());
  std::vector<double> x(idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a) x[a] = idx[a] * cfg.tracer_spacing();
  return x;
}

// Complex field on the boson lattice.
struct GridField {
  LatticeConfig cfg;
  CVector values;

  GridField() = default;
  explicit GridField(const LatticeConfig &c)
      : cfg(c), values(CVector::Zero(static_cast<Eigen::Index>(c.modes()))) {}
  GridField(const LatticeConfig &c, CVector v) : cfg(c), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != cfg.modes())
      throw std::invalid_argument("GridField: value count does not match K^d");
  }

  Eigen::Index size() const { return values.size(); }
  cplx &operator[](Eigen::Index i) { return values[i]; }
  const cplx &operator[](Eigen::Index i) const { return values[i]; }
};

inline void require_same_lattice(const GridField &f, const GridField &g) {
  if (!(f.cfg == g.cfg) || f.size() != g.size())
    throw std::invalid_argument("grid fields live on different lattices");
}

// <f,g> = h^d sum conj(f_j) g_j
inline cplx inner(const GridField &f, const GridField &g) {
  require_same_lattice(f, g);
  return f.cfg.cell_volume() * f.values.dot(g.values);
}

inline double norm_l2(const GridField &f) {
  return std::sqrt(f.cfg.cell_volume()) * f.values.norm();
}

// ||grad_h f||^2 with forward differences along every axis.
inline double gradient_norm_sq(const GridField &f) {
  const auto &c = f.cfg;
  const double h = c.spacing();
  double sum = 0.0;
  for (std::size_t j = 0; j < c.modes(); ++j) {
    auto idx = unflatten(j, c.sites, c.dim);
    for (int a = 0; a < c.dim; ++a) {
      auto nb = idx;
      nb[a] = (nb[a] + 1) % c.sites;
      sum += std::norm(f.values[static_cast<Eigen::Index>(flatten(nb, c.sites))] -
                       f.values[static_cast<Eigen::Index>(j)]) /
             (h * h);
    }
  }
  return c.cell_volume() * sum;
}

// ||f||_{H^1}^2 = ||f||^2 + ||grad_h f||^2
inline double norm_h1_sq(const GridField &f) {
  const double l2 = norm_l2(f);
  return l2 * l2 + gradient_norm_sq(f);
}

inline double norm_h1(const GridField &f) { return std::sqrt(norm_h1_sq(f)); }

// Off-centre weights c_r (r >= 1) of the central second-difference stencil;
// the centre weight is -2 sum c_r.
inline std::vector<double> laplacian_stencil(KineticSymbol symbol) {
  if (symbol == KineticSymbol::finite_difference) return {1.0};
  if (symbol == KineticSymbol::finite_difference_8)
    return {8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0};
  throw std::invalid_argument("spectral symbol has no finite stencil");
}

// Periodic finite-difference Laplacian on `axes` axes with k points each.
// Stencil points that wrap onto the same site are summed.
inline SparseOperator periodic_laplacian(int k, int axes, double h,
                                         KineticSymbol symbol = KineticSymbol::finite_difference) {
  const std::size_t n = LatticeConfig::ipow(k, axes);
  const auto c = laplacian_stencil(symbol);
  double centre = 0.0;
  for (double v : c) centre -= 2.0 * v;
  std::vector<Triplet> t;
  t.reserve(n * static_cast<std::size_t>(1 + 2 * axes * c.size()));
  const double inv = 1.0 / (h * h);
  for (std::size_t j = 0; j < n; ++j) {
    auto idx = unflatten(j, k, axes);
    t.emplace_back(j, j, centre * axes * inv);
    for (int a = 0; a < axes; ++a) {
      for (std::size_t r = 1; r <= c.size(); ++r) {
        for (int s : {-1, 1}) {
          auto nb = idx;
          nb[a] = ((nb[a] + s * static_cast<int>(r)) % k + k) % k;
          t.emplace_back(j, flatten(nb, k), c[r - 1] * inv);
        }
      }
    }
  }
  SparseOperator lap(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  lap.setFromTriplets(t.begin(), t.end());
  return lap;
}

inline SparseOperator discrete_laplacian(const LatticeConfig &cfg, LaplacianTarget target) {
  cfg.validate();
  if (target == LaplacianTarget::boson)
    return periodic_laplacian(cfg.sites, cfg.dim, cfg.spacing());
  return periodic_laplacian(cfg.tracer_sites, cfg.tracer_coords(), cfg.tracer_spacing());
}

// In-place DFT along every axis of a k^axes grid. forward: F_m = sum_j f_j
// e^{-2 pi i jm/k}; the inverse carries the 1/k^axes factor.
inline void fft_nd(CVector &values, int k, int axes, bool forward) {
  Eigen::FFT<double> fft;
  std::vector<cplx> in(static_cast<std::size_t>(k)), out(static_cast<std::size_t>(k));
  const std::size_t n = static_cast<std::size_t>(values.size());
  std::size_t stride = 1;
  for (int a = 0; a < axes; ++a) {
    const std::size_t block = stride * static_cast<std::size_t>(k);
    for (std::size_t base = 0; base < n; base += block) {
      for (std::size_t off = 0; off < stride; ++off) {
        for (int i = 0; i < k; ++i)
          in[i] = values[static_cast<Eigen::Index>(base + off + i * stride)];
        if (forward)
          fft.fwd(out, in);
        else
          fft.inv(out, in);
        for (int i = 0; i < k; ++i)
          values[static_cast<Eigen::Index>(base + off + i * stride)] = out[i];
      }
    }
    stride = block;
  }
}

// Signed integer wavenumber of FFT bin m on k points, in (-k/2, k/2].
inline int signed_bin(int m, int k) { return m <= k / 2 ? m : m - k; }

// Symbol of -Delta on the boson lattice in FFT bin order.
inline RVector kinetic_symbol(const LatticeConfig &cfg, KineticSymbol symbol) {
  const int k = cfg.sites;
  const double h = cfg.spacing();
  RVector omega(static_cast<Eigen::Index>(cfg.modes()));
  for (std::size_t j = 0; j < cfg.modes(); ++j) {
    auto idx = unflatten(j, k, cfg.dim);
    double w = 0.0;
    for (int a = 0; a < cfg.dim; ++a) {
      if (symbol != KineticSymbol::spectral) {
        const auto c = laplacian_stencil(symbol);
        for (std::size_t r = 1; r <= c.size(); ++r)
          w += 2.0 * c[r - 1] / (h * h) *
               (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(r) * idx[a] / k));
      } else {
        const double kk = 2.0 * std::numbers::pi * signed_bin(idx[a], k) / cfg.length;
        w += kk * kk;
      }
    }
    omega[static_cast<Eigen::Index>(j)] = w;
  }
  return omega;
}

// Unit-modulus multipliers e^{-i omega_k dt} of the free boson propagator.
inline CVector spectral_kinetic_phase(const LatticeConfig &cfg, double dt,
                                      KineticSymbol symbol) {
  const RVector omega = kinetic_symbol(cfg, symbol);
  CVector m(omega.size());
  for (Eigen::Index i = 0; i < omega.size(); ++i) m[i] = std::exp(-I * omega[i] * dt);
  return m;
}

// Applies a Fourier multiplier to a boson field.
inline GridField apply_fourier_multiplier(const GridField &f, const CVector &mult) {
  GridField out = f;
  fft_nd(out.values, f.cfg.sites, f.cfg.dim, true);
  out.values.array() *= mult.array();
  fft_nd(out.values, f.cfg.sites, f.cfg.dim, false);
  return out;
}

// <f, -Delta f> under the chosen symbol.
inline double kinetic_energy(const GridField &f, KineticSymbol symbol) {
  CVector hat = f.values;
  fft_nd(hat, f.cfg.sites, f.cfg.dim, true);
  const RVector omega = kinetic_symbol(f.cfg, symbol);
  double s = 0.0;
  for (Eigen::Index i = 0; i < hat.size(); ++i) s += omega[i] * std::norm(hat[i]);
  return f.cfg.cell_volume() * s / static_cast<double>(f.cfg.modes());
}

// ||f||^2 + <f,-Delta f>; equals norm_h1_sq for the finite-difference symbol.
inline double h1_energy(const GridField &f, KineticSymbol symbol) {
  const double l2 = norm_l2(f);
  return l2 * l2 + kinetic_energy(f, symbol);
}

// Discrete H^1 distance under the chosen symbol.
inline double h1_distance(const GridField &f, const GridField &g, KineticSymbol symbol) {
  require_same_lattice(f, g);
  GridField d(f.cfg, f.values - g.values);
  return std::sqrt(h1_energy(d, symbol));
}

// Largest |f| on lattice sites adjacent to the wrap seam (any coordinate index
// 0 or K-1).
inline double seam_amplitude(const GridField &f) {
  double m = 0.0;
  for (std::size_t j = 0; j < f.cfg.modes(); ++j) {
    auto idx = unflatten(j, f.cfg.sites, f.cfg.dim);
    for (int a = 0; a < f.cfg.dim; ++a)
      if (idx[a] == 0 || idx[a] == f.cfg.sites - 1) {
        m = std::max(m, std::abs(f.values[static_cast<Eigen::Index>(j)]));
        break;
      }
  }
  return m;
}

}  // namespace mflab

#endif  // MFLAB_LATTICE_HPP
