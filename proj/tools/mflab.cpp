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

// mflab command-line driver.
//
//   mflab meanfield   --config FILE --T 1 --dt 1e-3 --out traj.csv
//   mflab micro       --config FILE --N 2 --T 0.5 --out micro.csv [--dry-run]
//   mflab fluctuation --config FILE --N 2 --M 8 --T 0.5 --out fluct.csv
//   mflab verify-generator --config FILE --t 0.1 --delta 1e-4 --probes 4
//   mflab converge    --plan FILE --out DIR
//   mflab regress     --out DIR --golden DIR

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "mflab/harness.hpp"

using namespace mflab;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Overrides T and reads the config once.
RunConfig load_run(const std::string &path, std::optional<double> T) {
  auto kv = KeyValueConfig::load(path);
  if (T) kv.set("T", fmt(*T));
  return RunConfig::from_config(kv);
}

int run_meanfield(const std::string &config, double T, double dt, int every,
                  const std::string &symbol, const std::string &out) {
  const auto kv = KeyValueConfig::load(config);
  const auto cfg = LatticeConfig::from_config(kv);
  const auto spec = PotentialSpec::from_config(kv);
  const auto sym = parse_kinetic_symbol(symbol.empty() ? kv.get_string("kinetic", "fd") : symbol);
  const MeanFieldModel model(cfg, spec, sym);
  const auto init = initial_state_from_config(cfg, kv);
  const auto t0 = std::chrono::steady_clock::now();
  const auto traj = model.run(init, T, dt, every);
  CsvTable t;
  t.header = {"t"};
  for (std::size_t i = 0; i < init.X.size(); ++i) t.header.push_back("X" + std::to_string(i));
  for (std::size_t i = 0; i < init.V.size(); ++i) t.header.push_back("V" + std::to_string(i));
  for (const char *c : {"mass", "E_total", "E_kin_tracer", "E_h1", "E_pair", "E_coupling"})
    t.header.push_back(c);
  for (const auto &s : traj) {
    std::vector<std::string> r{fmt(s.t)};
    for (double x : s.X) r.push_back(fmt(x));
    for (double v : s.V) r.push_back(fmt(v));
    const auto e = model.energy(s);
    const double m = norm_l2(s.phi);
    for (double v : {m * m, e.total, e.kinetic_tracer, e.h1_boson, e.pair, e.coupling})
      r.push_back(fmt(v));
    t.rows.push_back(r);
  }
  write_csv(out, t);
  const auto c = conservation_report(model, traj);
  std::cout << "mass drift " << fmt(c.mass_drift) << ", energy drift " << fmt(c.energy_drift)
            << ", " << traj.size() << " samples -> " << out << "\n";
  if (const auto mu = fit_energy_mu(model, init))
    std::cout << "contraction horizon estimate " << fmt(estimate_contraction_horizon(model, init, *mu))
              << " (reported, not enforced)\n";
  std::cerr << "runtime " << seconds_since(t0) << " s\n";
  return 0;
}

int run_micro(const std::string &config, double N, std::optional<double> T, bool dry,
              const std::string &out) {
  const auto rc = load_run(config, T);
  const int n_max = rc.n_max_for(N);
  const FockBasis b(static_cast<int>(rc.lattice.modes()), n_max);
  const auto size = estimate_size(rc.lattice, b, rc.micro);
  const double nrm = norm_l2(rc.initial.phi);
  const auto tail = poisson_tail(N * nrm * nrm, n_max);
  std::cout << "N " << fmt(N) << ", n_max " << n_max << ", Poisson tail mass " << fmt(tail.mass)
            << "\n" << size.str() << "\n";
  if (size.bytes > rc.micro.memory_ceiling_bytes) {
    std::cerr << "refused: exceeds the memory ceiling of "
              << rc.micro.memory_ceiling_bytes / 1048576.0 << " MiB\n";
    return 2;
  }
  check_coherent_tail(b, rc.initial.phi, N);
  const auto pk = tracer_packet(rc.lattice, N, rc.initial.X, rc.initial.V, rc.packet_width,
                                rc.seam_tol);
  std::cout << "packet seam ratio " << fmt(pk.seam_ratio) << ", moments (X, P/N) p=1..3:";
  for (int p = 0; p < 3; ++p)
    std::cout << " (" << fmt(pk.moments.position[p]) << ", " << fmt(pk.moments.velocity[p]) << ")";
  std::cout << "\n";
  if (dry) return 0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = micro_run(rc, N, rc.T);
  CsvTable t{micro_csv_header(rc.lattice.tracer_coords()), {}};
  for (const auto &s : r.samples) t.rows.push_back(micro_csv_row(s));
  write_csv(out, t);
  std::cout << r.samples.size() << " samples -> " << out << " (fock tail mass "
            << fmt(r.initial.fock_tail_mass) << ", " << r.krylov.matvecs << " mat-vecs)\n";
  std::cerr << "runtime " << seconds_since(t0) << " s\n";
  return 0;
}

int run_fluctuation(const std::string &config, double N, int M, std::optional<double> T,
                    double truncated_dt, const std::string &out, std::string truncated_out) {
  const auto rc = load_run(config, T);
  const auto t0 = std::chrono::steady_clock::now();
  const auto fr = fluctuation_run(rc, N, M, rc.T, truncated_dt);
  CsvTable t{fluctuation_csv_header(), {}};
  for (const auto &s : fr.plain) t.rows.push_back(fluctuation_csv_row(s));
  write_csv(out, t);
  std::cout << "plain fluctuation state: " << fr.plain.size() << " samples -> " << out << "\n";
  if (!fr.truncated.empty()) {
    if (truncated_out.empty()) {
      const std::filesystem::path p(out);
      truncated_out = (p.parent_path() / (p.stem().string() + "_truncated" + p.extension().string())).string();
    }
    CsvTable u{truncated_csv_header(), {}};
    for (const auto &s : fr.truncated) u.rows.push_back(truncated_csv_row(s));
    write_csv(truncated_out, u);
    std::cout << "truncated flow U^(M), M = " << M << ": " << fr.truncated.size()
              << " samples -> " << truncated_out << "\n";
  }
  std::cerr << "runtime " << seconds_since(t0) << " s\n";
  return 0;
}

int run_verify(const std::string &config, double N, double t, double delta, int probes,
               int interior, std::uint64_t seed) {
  const auto rc = load_run(config, std::nullopt);
  const auto model = matched_model(rc);
  MeanFieldState mf = rc.initial;
  if (t > 0.0) mf = model.run(rc.initial, t, rc.mf_dt, std::max(1L, commensurate(t, rc.mf_dt, "t / mf.dt"))).back();
  const FockBasis b(static_cast<int>(rc.lattice.modes()), rc.n_max_for(N));
  const auto rep = verify_generator_identity(model, b, N, mf, delta, interior, probes, seed, rc.micro);
  std::cout << "generator identity at t = " << fmt(t) << ", delta = " << fmt(delta)
            << ", probes " << probes << " in N_b <= " << interior << ", n_max " << b.n_max()
            << ", scale max ||L Phi|| = " << fmt(rep.scale) << "\n";
  for (const auto &r : rep.residuals)
    std::cout << "  " << to_string(r.variant) << " residual " << fmt(r.residual) << "\n";
  std::cout << "adjudicated: " << to_string(rep.adjudicated) << "\n";
  return 0;
}

int run_converge(const std::string &plan_path, std::string out) {
  const auto plan = ExperimentPlan::load(plan_path);
  if (out.empty()) out = plan.out_dir;
  if (out.empty()) throw std::invalid_argument("converge: no output directory");
  const auto rc = plan.run_config();
  bool admissible = true;
  for (const auto &c : check_plan(plan, rc))
    if (!c.problem.empty()) {
      std::cerr << "plan: N = " << fmt(c.N) << " is not admissible: " << c.problem << "\n";
      admissible = false;
    }
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_experiment(plan, rc);
  for (const auto &r : res.rows)
    std::cerr << "row N = " << fmt(r.N) << " runtime " << r.runtime << " s\n";
  std::cout << emit_report(plan, rc, res, out);
  std::cerr << "runtime " << seconds_since(t0) << " s\n";
  const bool pass = admissible && (!plan.sweep || res.gates.pass());
  return pass ? 0 : 1;
}

int run_regress(const std::string &out, const std::string &golden, const std::string &tol) {
  std::optional<ToleranceTable> t;
  if (!tol.empty()) t = ToleranceTable::from_config(KeyValueConfig::load(tol));
  const auto rep = regression_check(out, golden, t);
  std::cout << rep.str();
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"mflab: tracer particle in a Bose gas, microscopic vs mean-field dynamics"};
  app.require_subcommand(1);

  std::string config, out, plan, golden, tol, symbol, truncated_out;
  double T = 1.0, dt = 1e-3, N = 1.0, t = 0.0, delta = 1e-4, truncated_dt = 0.01;
  std::optional<double> T_opt;
  int every = 1, M = 0, probes = 4, interior = 3;
  std::uint64_t seed = 17;
  bool dry = false;

  auto *mf = app.add_subcommand("meanfield", "integrate the mean-field equations");
  mf->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  mf->add_option("--T", T, "final time")->required();
  mf->add_option("--dt", dt, "Strang step")->required();
  mf->add_option("--record-every", every, "steps between rows");
  mf->add_option("--symbol", symbol, "kinetic symbol: fd, fd8 or spectral (default: config)");
  mf->add_option("--out", out, "trajectory CSV")->required();

  auto *mi = app.add_subcommand("micro", "microscopic evolution and observables");
  mi->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  mi->add_option("--N", N, "scale parameter")->required();
  mi->add_option("--T", T_opt, "final time (default: config)");
  mi->add_option("--out", out, "observables CSV");
  mi->add_flag("--dry-run", dry, "report sizes and the packet, then stop");

  auto *fl = app.add_subcommand("fluctuation", "fluctuation state and Gronwall diagnostic");
  fl->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  fl->add_option("--N", N, "scale parameter")->required();
  fl->add_option("--M", M, "number cutoff for the tail norm and the truncated flow")->required();
  fl->add_option("--T", T_opt, "final time (default: config)");
  fl->add_option("--out", out, "plain fluctuation CSV")->required();
  fl->add_option("--truncated-dt", truncated_dt, "midpoint step of the truncated flow (0: skip)");
  fl->add_option("--truncated-out", truncated_out, "truncated-flow CSV (default: <out>_truncated)");

  auto *vg = app.add_subcommand("verify-generator", "check the generator identity");
  vg->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  vg->add_option("--N", N, "scale parameter");
  vg->add_option("--t", t, "time on the mean-field trajectory");
  vg->add_option("--delta", delta, "central-difference half width");
  vg->add_option("--probes", probes, "number of random probes");
  vg->add_option("--interior", interior, "probes live in N_b <= interior");
  vg->add_option("--seed", seed, "probe seed");

  auto *cv = app.add_subcommand("converge", "N sweep against the mean-field limit");
  cv->add_option("--plan", plan, "plan file")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", out, "output directory (default: plan 'out')");

  auto *rg = app.add_subcommand("regress", "compare outputs with a golden directory");
  rg->add_option("--out", out, "current output directory")->required();
  rg->add_option("--golden", golden, "golden directory")->required();
  rg->add_option("--tolerances", tol, "tolerance file (default: golden/tolerances.cfg)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mf->parsed()) return run_meanfield(config, T, dt, every, symbol, out);
    if (mi->parsed()) {
      if (!dry && out.empty()) throw std::invalid_argument("micro: --out is required unless --dry-run");
      return run_micro(config, N, T_opt, dry, out);
    }
    if (fl->parsed()) return run_fluctuation(config, N, M, T_opt, truncated_dt, out, truncated_out);
    if (vg->parsed()) return run_verify(config, N, t, delta, probes, interior, seed);
    if (cv->parsed()) return run_converge(plan, out);
    if (rg->parsed()) return run_regress(out, golden, tol);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
