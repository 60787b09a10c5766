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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mflab/harness.hpp"

using namespace mflab;
namespace fs = std::filesystem;

namespace {

// Free bosons on two sites, decoupled tracer at rest.
const char *kFreeConfig = R"(
dim = 1
length = 6.4
sites = 2
tracer_sites = 80
w.kind = constant
w.amplitude = 0.0
v.kind = zero
X0 = 3.2
V0 = 0.0
phi.kind = gaussian
phi.center = 1.6
phi.width = 1.0
packet.width = 0.5
n_max = auto
T = 0.2
dt_report = 0.05
mf.dt = 1e-3
)";

// Interacting two-site model on a coarse tracer lattice; the packet check is
// relaxed so that the composite space stays below 400 states.
const char *kSmallConfig = R"(
dim = 1
length = 4.0
sites = 2
tracer_sites = 8
w.kind = gaussian
w.amplitude = 1.0
w.width = 1.0
v.kind = regularized_coulomb
v.lambda = 1.0
v.epsilon = 0.5
X0 = 1.5
V0 = 0.5
phi.kind = gaussian
phi.center = 2.0
phi.width = 1.0
phi.momentum = 0.3
packet.width = 1.5
packet.seam_tol = 1.0
n_max = 8
T = 0.3
dt_report = 0.1
mf.dt = 1e-3
)";

RunConfig parse(const char *text) { return RunConfig::from_config(KeyValueConfig::parse(text)); }

fs::path scratch_dir(const std::string &name) {
  const auto p = fs::temp_directory_path() / ("mflab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(FitRate, ExactPowerLaw) {
  const std::vector<double> n{1, 2, 4, 8};
  std::vector<double> e;
  for (double x : n) e.push_back(3.0 / std::sqrt(x));
  const auto f = fit_rate(n, e);
  EXPECT_NEAR(f.slope, -0.5, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
  EXPECT_LT(f.residual, 1e-12);
  EXPECT_EQ(f.points, 4);
}

TEST(FitRate, ConstantHasZeroSlope) {
  const auto f = fit_rate({1, 2, 4}, {0.7, 0.7, 0.7});
  EXPECT_NEAR(f.slope, 0.0, 1e-14);
}

TEST(FitRate, NonpositiveValuesExcludedWithWarning) {
  const auto f = fit_rate({1, 2, 4, 8}, {1.0, 0.0, 0.25, -1.0});
  EXPECT_EQ(f.points, 2);
  EXPECT_EQ(f.warnings.size(), 2u);
  EXPECT_NEAR(f.slope, -1.0, 1e-12);
}

TEST(FitRate, RefusesFewerThanTwoPoints) {
  EXPECT_THROW(fit_rate({1, 2}, {1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(fit_rate({1}, {1.0}), std::invalid_argument);
  EXPECT_THROW(fit_rate({2, 2}, {1.0, 0.5}), std::invalid_argument);
}

TEST(RunConfig, ParsesRunKeys) {
  const auto rc = parse(kSmallConfig);
  EXPECT_EQ(rc.n_max_for(1.0), 8);
  EXPECT_DOUBLE_EQ(rc.packet_width, 1.5);
  EXPECT_DOUBLE_EQ(rc.dt_report, 0.1);
  const auto fc = parse(kFreeConfig);
  // mu + 6 sqrt(mu) rounded up
  EXPECT_EQ(fc.n_max_for(1.0), 7);
  EXPECT_EQ(fc.n_max_for(4.0), 16);
  auto kv = KeyValueConfig::parse(kSmallConfig);
  kv.set("krylov.reorth", "sideways");
  EXPECT_THROW(RunConfig::from_config(kv), std::invalid_argument);
  EXPECT_NE(parse(kSmallConfig).hash(), parse(kFreeConfig).hash());
}

TEST(Convergence, DecoupledFreeCaseHasNoError) {
  const auto rc = parse(kFreeConfig);
  const auto rows = run_convergence_sweep(rc, {1, 2, 4}, rc.T);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto &r : rows) {
    ASSERT_TRUE(r.ok) << r.error;
    EXPECT_LT(r.err_X, 1e-8) << "N " << r.N;
    EXPECT_LT(r.err_V, 1e-8) << "N " << r.N;
    // Gamma of a freely moving coherent state is |phi_t><phi_t| up to the
    // particles and weight cut off above n_max
    const auto tail = poisson_tail(r.N, r.n_max);
    EXPECT_LT(r.err_trace, 2.0 * (tail.first_moment / r.N + tail.mass) + 1e-10) << "N " << r.N;
    EXPECT_LE(r.err_trace, 2.0 * r.err_hs + 1e-15);
  }
}

TEST(Convergence, MicroRunMatchesDenseExponential) {
  const auto rc = parse(kSmallConfig);
  const MicroRun r = micro_run(rc, 1.0, rc.T, true);
  ASSERT_LE(r.size.dim, 2000);
  const FockBasis b(2, rc.n_max_for(1.0));
  const CMatrix h = CMatrix(assemble_hamiltonian(rc.lattice, rc.potentials, b, 1.0, rc.micro));
  const CVector ref = (h * (-I * rc.T)).exp() * r.initial.state.amplitudes;
  EXPECT_LT((r.states.back().amplitudes - ref).cwiseAbs().maxCoeff(), 1e-8);
  // the sweep row reads the same observables off the same state
  const auto row = run_convergence_row(rc, 1.0, rc.T);
  ASSERT_TRUE(row.ok) << row.error;
  const CompositeState fin{ref, 1.0, rc.T};
  const auto obs = measure_tracer(rc.lattice, b, fin, rc.micro.tracer_p);
  const auto &mf = r.meanfield.back();
  EXPECT_NEAR(row.err_X, std::abs(wrap(obs.X[0] - mf.X[0], rc.lattice.length)), 1e-8);
  EXPECT_NEAR(row.err_V, std::abs(obs.P_over_N[0] - mf.V[0]), 1e-8);
  const auto d = trace_distance(one_particle_density(rc.lattice, b, fin), mf.phi);
  EXPECT_NEAR(row.err_trace, d.trace, 1e-8);
  EXPECT_NEAR(row.err_hs, d.hs, 1e-8);
  EXPECT_LT(row.nb_drift, 1e-10);
}

TEST(Convergence, FailingRowDoesNotAbortSweep) {
  auto kv = KeyValueConfig::parse(kFreeConfig);
  kv.set("n_max", "7");  // enough for N = 1, not for N = 4
  const auto rc = RunConfig::from_config(kv);
  const auto rows = run_convergence_sweep(rc, {1, 4}, 0.05);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].ok) << rows[0].error;
  EXPECT_FALSE(rows[1].ok);
  EXPECT_NE(rows[1].error.find("n_max"), std::string::npos) << rows[1].error;
  const auto gates = evaluate_gates(rows, fit_rows(rows));
  EXPECT_FALSE(gates.all_rows_ok);
  EXPECT_FALSE(gates.pass());
}

TEST(Convergence, GatesOnSyntheticRows) {
  std::vector<ConvergenceRow> rows;
  for (double N : {1.0, 2.0, 4.0}) {
    ConvergenceRow r;
    r.N = N;
    r.ok = true;
    r.err_X = 0.1 / N;
    r.err_V = 0.1 / N;
    r.err_trace = 0.2 / std::sqrt(N);
    r.err_hs = 0.15 / std::sqrt(N);
    rows.push_back(r);
  }
  auto g = evaluate_gates(rows, fit_rows(rows));
  EXPECT_TRUE(g.pass());
  rows[2].err_X = rows[1].err_X;
  g = evaluate_gates(rows, fit_rows(rows));
  EXPECT_FALSE(g.err_X_decreasing);
  rows[2].err_hs = 0.01;
  g = evaluate_gates(rows, fit_rows(rows));
  EXPECT_FALSE(g.trace_dominated);
}

TEST(Plan, ParsesAndChecksAdmissibility) {
  const auto dir = scratch_dir("plan");
  std::ofstream(dir / "base.cfg") << kFreeConfig;
  std::ofstream(dir / "plan.cfg") << "config = base.cfg\nN_list = 1, 4\nT = 0.1\n"
                                     "dt_report = 0.05\nseed = 5\nmoments = off\n"
                                     "set.n_max = 7\n";
  const auto plan = ExperimentPlan::load((dir / "plan.cfg").string());
  EXPECT_EQ(plan.N_list, (std::vector<double>{1, 4}));
  EXPECT_EQ(plan.seed, 5u);
  EXPECT_FALSE(plan.moments);
  const auto rc = plan.run_config();
  EXPECT_EQ(rc.n_max_for(4.0), 7);
  EXPECT_DOUBLE_EQ(rc.T, 0.1);
  const auto checks = check_plan(plan, rc);
  ASSERT_EQ(checks.size(), 2u);
  EXPECT_TRUE(checks[0].problem.empty());
  EXPECT_FALSE(checks[1].problem.empty());
}

TEST(Regression, IdenticalPassesPerturbedFailsByColumn) {
  const auto gold = scratch_dir("gold");
  const auto cur = scratch_dir("cur");
  CsvTable t{{"N", "err_X", "label"}, {{"1", "1.0000000000e-02", "ok"}, {"2", "5.0e-03", "ok"}}};
  write_csv((gold / "a.csv").string(), t);
  write_csv((cur / "a.csv").string(), t);
  EXPECT_TRUE(regression_check(cur.string(), gold.string()).pass);

  t.rows[0][1] = fmt(1e-2 * (1.0 + 1e-3));
  write_csv((cur / "a.csv").string(), t);
  ToleranceTable tol;
  tol.columns["err_X"] = {1e-8, 0.0};
  auto rep = regression_check(cur.string(), gold.string(), tol);
  EXPECT_FALSE(rep.pass);
  ASSERT_EQ(rep.messages.size(), 1u);
  EXPECT_NE(rep.messages[0].find("err_X"), std::string::npos);
  // the same perturbation passes a loose column tolerance
  tol.columns["err_X"] = {1e-2, 0.0};
  EXPECT_TRUE(regression_check(cur.string(), gold.string(), tol).pass);

  // tolerances file in the golden directory
  std::ofstream(gold / "tolerances.cfg") << "a.csv:err_X = 1e-8\n";
  EXPECT_FALSE(regression_check(cur.string(), gold.string()).pass);
}

TEST(Regression, SchemaMismatchFailsWithDiff) {
  const auto gold = scratch_dir("gold_schema");
  const auto cur = scratch_dir("cur_schema");
  write_csv((gold / "a.csv").string(), {{"N", "err_X"}, {{"1", "0.1"}}});
  write_csv((cur / "a.csv").string(), {{"N", "err_Y"}, {{"1", "0.1"}}});
  auto rep = regression_check(cur.string(), gold.string());
  EXPECT_FALSE(rep.pass);
  EXPECT_NE(rep.str().find("schema mismatch"), std::string::npos);
  EXPECT_NE(rep.str().find("err_Y"), std::string::npos);
  write_csv((cur / "a.csv").string(), {{"N", "err_X"}, {{"1", "0.1"}, {"2", "0.05"}}});
  EXPECT_FALSE(regression_check(cur.string(), gold.string()).pass);
  fs::remove(cur / "a.csv");
  rep = regression_check(cur.string(), gold.string());
  EXPECT_FALSE(rep.pass);
  EXPECT_NE(rep.str().find("missing"), std::string::npos);
  EXPECT_THROW(regression_check(cur.string(), (gold / "nope").string()), std::invalid_argument);
}

TEST(Report, EmptyTogglesGiveHeaderOnly) {
  const auto dir = scratch_dir("report_empty");
  std::ofstream(dir / "base.cfg") << kFreeConfig;
  std::ofstream(dir / "plan.cfg")
      << "config = base.cfg\nsweep = off\ngronwall = off\nmoments = off\nfluctuation = off\n";
  const auto plan = ExperimentPlan::load((dir / "plan.cfg").string());
  const auto rc = plan.run_config();
  const auto res = run_experiment(plan, rc);
  const auto text = emit_report(plan, rc, res, (dir / "out").string());
  EXPECT_NE(text.find("config_hash"), std::string::npos);
  EXPECT_EQ(text.find("convergence"), std::string::npos);
  int files = 0;
  for (const auto &e : fs::directory_iterator(dir / "out")) {
    ++files;
    EXPECT_EQ(e.path().filename(), "summary.txt");
  }
  EXPECT_EQ(files, 1);
}

TEST(Report, RefusedMomentRowIsRecorded) {
  const auto dir = scratch_dir("report_moments");
  std::ofstream(dir / "base.cfg") << kFreeConfig;
  std::ofstream(dir / "plan.cfg") << "config = base.cfg\nsweep = off\ngronwall = off\n"
                                     "moment_N = 1, 64\n";
  const auto plan = ExperimentPlan::load((dir / "plan.cfg").string());
  const auto rc = plan.run_config();
  const auto res = run_experiment(plan, rc);
  ASSERT_EQ(res.moments.size(), 2u);
  EXPECT_TRUE(res.moments[0].error.empty());
  EXPECT_NE(res.moments[1].error.find("too coarse"), std::string::npos);
  const auto text = emit_report(plan, rc, res, (dir / "out").string());
  EXPECT_NE(text.find("refused"), std::string::npos);
  EXPECT_EQ(read_csv((dir / "out" / "moments.csv").string()).rows.size(), 3u);
}

TEST(Report, FullSweepIsDeterministicWithOneRowPerN) {
  const auto dir = scratch_dir("report_full");
  std::ofstream(dir / "base.cfg") << kFreeConfig;
  std::ofstream(dir / "plan.cfg") << "config = base.cfg\nN_list = 1, 2\nT = 0.1\n"
                                     "dt_report = 0.05\nmoment_N = 1, 2\nfluctuation = on\n";
  const auto plan = ExperimentPlan::load((dir / "plan.cfg").string());
  const auto rc = plan.run_config();
  for (const char *out : {"a", "b"}) emit_report(plan, rc, run_experiment(plan, rc), (dir / out).string());
  std::vector<std::string> names;
  for (const auto &e : fs::directory_iterator(dir / "a")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"convergence.csv", "fit.csv", "fluctuation_N1.csv",
                                             "fluctuation_N2.csv", "gronwall0.csv",
                                             "moments.csv", "summary.txt"}));
  for (const auto &n : names) EXPECT_EQ(slurp(dir / "a" / n), slurp(dir / "b" / n)) << n;
  const auto conv = read_csv((dir / "a" / "convergence.csv").string());
  EXPECT_EQ(conv.rows.size(), 2u);
  EXPECT_TRUE(regression_check((dir / "b").string(), (dir / "a").string()).pass);
}

TEST(Fluctuation, FreeRunStaysInVacuum) {
  // decoupled tracer, free bosons: Omega_t keeps no particles and the
  // truncated flow at full cutoff agrees
  auto kv = KeyValueConfig::parse(kFreeConfig);
  kv.set("n_max", "12");
  const auto rc = RunConfig::from_config(kv);
  const auto fr = fluctuation_run(rc, 1.0, 12, 0.1, 0.01);
  ASSERT_EQ(fr.plain.size(), 3u);
  for (const auto &s : fr.plain) {
    EXPECT_LT(s.nb_mean, 1e-6);
    EXPECT_NEAR(s.nb_mean, fr.plain.front().nb_mean, 1e-12);
    EXPECT_NEAR(s.norm, 1.0, 1e-8);
    EXPECT_LT(s.tail_norm, 1e-12);
  }
  ASSERT_EQ(fr.truncated.size(), 3u);
  for (std::size_t n = 0; n < 3; ++n)
    EXPECT_NEAR(fr.truncated[n].gronwall.g_total, fr.plain[n].gronwall.g_total,
                1e-6 * fr.plain[n].gronwall.g_total);
}
