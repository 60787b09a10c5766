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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mflab/meanfield.hpp"

using namespace mflab;

namespace {

struct Setup {
  LatticeConfig cfg;
  PotentialSpec spec;
  MeanFieldState init;
};

Setup standard() {
  const auto kv = KeyValueConfig::load("configs/standard_meanfield.cfg");
  Setup s;
  s.cfg = LatticeConfig::from_config(kv);
  s.spec = PotentialSpec::from_config(kv);
  s.init = initial_state_from_config(s.cfg, kv);
  return s;
}

LatticeConfig line(int k, double length) {
  LatticeConfig c;
  c.length = length;
  c.sites = k;
  c.tracer_sites = k;
  return c;
}

// Energy with explicit loops: forward-difference gradient, pairwise double sum
// for the pair term, per-site kernel evaluation for the coupling.
double naive_energy(const LatticeConfig &c, const PotentialSpec &s, const MeanFieldState &st) {
  const double h = c.spacing(), hd = c.cell_volume();
  double e = 0.0;
  for (double v : st.V) e += 0.5 * v * v;
  for (std::size_t j = 0; j < c.modes(); ++j) {
    const cplx f = st.phi.values[j];
    const cplx g = st.phi.values[(j + 1) % c.modes()];
    e += hd * (std::norm(f) + std::norm(g - f) / (h * h));
  }
  for (std::size_t j = 0; j < c.modes(); ++j)
    for (std::size_t k = 0; k < c.modes(); ++k)
      e += 0.5 * hd * hd * v_value(s, min_image(c, site_position(c, j), site_position(c, k))) *
           std::norm(st.phi.values[j]) * std::norm(st.phi.values[k]);
  for (std::size_t j = 0; j < c.modes(); ++j)
    e += hd * eval_w_total(s, c, site_position(c, j), st.X) * std::norm(st.phi.values[j]);
  return e;
}

}  // namespace

TEST(MeanField, EnergyOfZeroFieldIsTracerKinetic) {
  auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  st.init.phi = GridField(st.cfg);
  const auto e = m.energy(st.init);
  EXPECT_DOUBLE_EQ(e.total, 0.5 * 0.5 * 0.5);
}

TEST(MeanField, EnergyOfPlaneWave) {
  const auto c = line(16, 5.0);
  PotentialSpec none;
  none.w_kind = TracerKernel::constant;
  none.w_amplitude = 0.0;
  for (auto sym : {KineticSymbol::finite_difference, KineticSymbol::spectral}) {
    MeanFieldModel m(c, none, sym);
    MeanFieldState s{{1.0}, {0.3}, plane_wave(c, {2}), 0.0};
    const double omega = kinetic_symbol(c, sym)[2];
    EXPECT_NEAR(m.energy(s).total, 0.5 * 0.09 + 1.0 + omega, 1e-12);
  }
}

TEST(MeanField, EnergyMatchesNaiveLoops) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  std::mt19937_64 rng(5);
  MeanFieldState s = st.init;
  s.phi = random_smooth_field(st.cfg, rng, 4);
  s.X = {3.7};
  s.V = {-0.2};
  const auto e = m.energy(s);
  EXPECT_NEAR(e.total, naive_energy(st.cfg, st.spec, s), 1e-12 * std::abs(e.total));
  EXPECT_NEAR(e.total, e.kinetic_tracer + e.h1_boson + e.pair + e.coupling, 1e-12);
}

TEST(MeanField, FreePlaneWaveEvolution) {
  const auto c = line(16, 5.0);
  PotentialSpec none;
  none.w_kind = TracerKernel::constant;
  none.w_amplitude = 0.0;
  MeanFieldModel m(c, none);
  const GridField p = plane_wave(c, {3});
  MeanFieldState s{{1.0}, {0.7}, p, 0.0};
  const double T = 0.8, dt = 0.01;
  const auto traj = m.run(s, T, dt);
  const auto &end = traj.back();
  const double omega = kinetic_symbol(c, KineticSymbol::finite_difference)[3];
  const CVector expected = std::exp(-I * omega * T) * p.values;
  EXPECT_LT((end.phi.values - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(end.X[0], 1.0 + 0.7 * T, 1e-12);
  EXPECT_EQ(end.V[0], 0.7);
}

TEST(MeanField, NoForceWithoutCoupling) {
  auto st = standard();
  st.spec.w_kind = TracerKernel::constant;
  MeanFieldModel m(st.cfg, st.spec);
  const auto traj = m.run(st.init, 0.2, 0.01);
  for (const auto &s : traj) EXPECT_EQ(s.V[0], st.init.V[0]);
}

TEST(MeanField, ZeroFieldIsPureClassicalMotion) {
  auto st = standard();
  st.init.phi = GridField(st.cfg);
  MeanFieldModel m(st.cfg, st.spec);
  const auto traj = m.run(st.init, 0.5, 0.05);
  EXPECT_NEAR(traj.back().X[0], 8.0 + 0.5 * 0.5, 1e-12);
  EXPECT_EQ(traj.back().phi.values.norm(), 0.0);
}

TEST(MeanField, InitialDataClearsSeam) {
  const auto st = standard();
  EXPECT_LT(seam_amplitude(st.init.phi), 1e-8);
  EXPECT_NEAR(norm_l2(st.init.phi), 1.0, 1e-14);
}

TEST(MeanField, MassConservedAndSecondOrder) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  const auto coarse = m.run(st.init, 1.0, 2e-3);
  const auto mid = m.run(st.init, 1.0, 1e-3);
  const auto fine = m.run(st.init, 1.0, 5e-4);
  const auto rep = conservation_report(m, mid);
  EXPECT_LT(rep.mass_drift, 1e-10);
  const double d1 = h1_distance(coarse.back().phi, mid.back().phi, m.symbol());
  const double d2 = h1_distance(mid.back().phi, fine.back().phi, m.symbol());
  EXPECT_GT(d1 / d2, 3.0);
  EXPECT_LT(d1 / d2, 5.0);
}

TEST(MeanField, TimeReversible) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  MeanFieldState s = st.init;
  for (int i = 0; i < 200; ++i) s = m.step_strang(s, 2e-3);
  for (int i = 0; i < 200; ++i) s = m.step_strang(s, -2e-3);
  EXPECT_LT((s.phi.values - st.init.phi.values).norm(), 1e-9);
  EXPECT_NEAR(s.X[0], st.init.X[0], 1e-9);
  EXPECT_NEAR(s.V[0], st.init.V[0], 1e-9);
}

TEST(MeanField, EnergyLowerBoundAlongTrajectory) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  const auto mu = fit_energy_mu(m, st.init);
  ASSERT_TRUE(mu.has_value());
  for (const auto &s : m.run(st.init, 1.0, 1e-2)) EXPECT_TRUE(energy_bound_holds(m, s, *mu));
}

TEST(MeanField, Rk4AgreesWithStrang) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  const auto a = m.advance_rk4(st.init, 0.05, 200);
  const auto b = m.run(st.init, 0.05, 1e-4).back();
  EXPECT_LT(h1_distance(a.phi, b.phi, m.symbol()), 1e-6);
  EXPECT_NEAR(a.X[0], b.X[0], 1e-9);
}

TEST(MeanField, PicardBaseCases) {
  auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  const auto anchor = picard_solve(m, st.init, 0.05, 10, 0);
  for (const auto &s : anchor.trajectory) {
    EXPECT_EQ(s.X[0], st.init.X[0]);
    EXPECT_EQ((s.phi.values - st.init.phi.values).norm(), 0.0);
  }
  PotentialSpec none;
  none.w_kind = TracerKernel::constant;
  none.w_amplitude = 0.0;
  MeanFieldModel free(st.cfg, none);
  const auto one = picard_solve(free, st.init, 0.05, 10, 1);
  const auto two = picard_solve(free, st.init, 0.05, 10, 2);
  EXPECT_LT(trajectory_distance(one.trajectory, two.trajectory, free.symbol()), 1e-13);
  EXPECT_LT((one.trajectory.back().phi.values - free.free_propagate(st.init.phi, 0.05).values)
                .norm(),
            1e-13);
}

TEST(MeanField, PicardMatchesStrang) {
  const auto st = standard();
  MeanFieldModel m(st.cfg, st.spec);
  const auto pic = picard_solve(m, st.init, 0.05, 500, 12);
  const auto ref = m.run(st.init, 0.05, 1e-4).back();
  EXPECT_LT(h1_distance(pic.trajectory.back().phi, ref.phi, m.symbol()), 1e-6);
  EXPECT_LT(std::abs(pic.trajectory.back().X[0] - ref.X[0]), 1e-8);
  for (std::size_t k = 1; k < pic.distances.size(); ++k)
    EXPECT_LE(pic.distances[k], pic.distances[k - 1] * (1.0 + 1e-9) + 1e-12);
  const auto mu = fit_energy_mu(m, st.init).value();
  EXPECT_GT(estimate_contraction_horizon(m, st.init, mu), 0.0);
}

TEST(MeanField, PicardDetectsNonContraction) {
  auto st = standard();
  st.spec.w_amplitude = 200.0;
  st.spec.v_lambda = 200.0;
  MeanFieldModel m(st.cfg, st.spec);
  EXPECT_THROW(picard_solve(m, st.init, 2.0, 200, 12), std::runtime_error);
}
