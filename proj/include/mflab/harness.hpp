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

#ifndef MFLAB_HARNESS_HPP
#define MFLAB_HARNESS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "fluctuation.hpp"
#include "micro.hpp"

#define MFLAB_VERSION "0.1.0"

namespace mflab {

// ---------------------------------------------------------------------------
// Run configuration

// Everything a microscopic run needs, read from one key=value file on top of
// the lattice, potential and mean-field keys.
struct RunConfig {
  KeyValueConfig kv;
  LatticeConfig lattice;
  PotentialSpec potentials;
  MeanFieldState initial;
  std::optional<int> n_max;  // empty: ceil(mu + 6 sqrt(mu)) with mu = N ||phi0||^2
  double packet_width = 0.5;
  double seam_tol = 1e-4;
  double mf_dt = 1e-3;
  double T = 0.5;
  double dt_report = 0.05;
  MicroOptions micro;

  static RunConfig from_config(const KeyValueConfig &kv) {
    RunConfig c;
    c.kv = kv;
    c.lattice = LatticeConfig::from_config(kv);
    c.potentials = PotentialSpec::from_config(kv);
    c.initial = initial_state_from_config(c.lattice, kv);
    const auto nm = kv.get_string("n_max", "auto");
    if (nm != "auto") {
      const long v = kv.get_int("n_max");
      if (v < 0) throw std::invalid_argument("n_max must be >= 0");
      c.n_max = static_cast<int>(v);
    }
    c.packet_width = kv.get_double("packet.width", c.packet_width);
    c.seam_tol = kv.get_double("packet.seam_tol", c.seam_tol);
    c.mf_dt = kv.get_double("mf.dt", c.mf_dt);
    c.T = kv.get_double("T", c.T);
    c.dt_report = kv.get_double("dt_report", c.dt_report);
    c.micro.memory_ceiling_bytes =
        kv.get_double("memory_ceiling_mb", c.micro.memory_ceiling_bytes / 1048576.0) * 1048576.0;
    c.micro.tracer_kinetic = parse_kinetic_symbol(kv.get_string("tracer_kinetic", "fd"));
    c.micro.tracer_p = parse_tracer_momentum(kv.get_string("tracer_p", "spectral"));
    c.micro.krylov.tol = kv.get_double("krylov.tol", c.micro.krylov.tol);
    c.micro.krylov.max_dim = static_cast<int>(kv.get_int("krylov.max_dim", c.micro.krylov.max_dim));
    c.micro.krylov.reorth = parse_reorthogonalization(kv.get_string("krylov.reorth", "full"));
    if (!(c.packet_width > 0.0)) throw std::invalid_argument("packet.width must be positive");
    if (!(c.mf_dt > 0.0) || !(c.dt_report > 0.0) || c.T < 0.0)
      throw std::invalid_argument("need mf.dt > 0, dt_report > 0, T >= 0");
    return c;
  }

  static RunConfig load(const std::string &path) {
    return from_config(KeyValueConfig::load(path));
  }

  int n_max_for(double N) const {
    if (n_max) return *n_max;
    const double nrm = norm_l2(initial.phi);
    const double mu = N * nrm * nrm;
    return std::max(2, static_cast<int>(std::ceil(mu + 6.0 * std::sqrt(mu))));
  }

  std::uint64_t hash() const { return fnv1a64(kv.canonical()); }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fixed-format number used in every emitted file.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

// Short label for file names, e.g. 4 -> "4", 0.5 -> "0.5".
inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Steps of size `step` that make up `span`; throws unless commensurate.
inline long commensurate(double span, double step, const char *what) {
  const long n = std::lround(span / step);
  if (n < 0 || std::abs(n * step - span) > 1e-9 * std::max(1.0, span))
    throw std::invalid_argument(std::string(what) + ": spans are not commensurate");
  return n;
}

// ---------------------------------------------------------------------------
// Microscopic runs against the mean-field companion

struct MicroSample {
  double t = 0.0;
  TracerObservables tracer;
  NumberMoments nb;
  double energy = 0.0;
  DensityDistance density;
};

struct MicroRun {
  double N = 1.0;
  int n_max = 0;
  MicroSizeReport size;
  InitialData initial;
  MeanFieldTrajectory meanfield;  // every mean-field step
  long mf_per_report = 1;
  std::vector<CompositeState> states;  // every report step
  std::vector<MicroSample> samples;
  KrylovStats krylov;

  const MeanFieldState &meanfield_at(std::size_t report) const {
    return meanfield[report * static_cast<std::size_t>(mf_per_report)];
  }
};

// Both dynamics with the finite-difference boson symbol on each side.
inline MeanFieldModel matched_model(const RunConfig &rc) {
  return MeanFieldModel(rc.lattice, rc.potentials, KineticSymbol::finite_difference);
}

inline MicroRun micro_run(const RunConfig &rc, double N, double T, bool keep_states = false) {
  MicroRun r;
  r.N = N;
  r.n_max = rc.n_max_for(N);
  const FockBasis b(static_cast<int>(rc.lattice.modes()), r.n_max);
  r.size = estimate_size(rc.lattice, b, rc.micro);
  const auto model = matched_model(rc);
  r.initial = build_initial(rc.lattice, rc.potentials, b, N, rc.initial.X, rc.initial.V,
                            rc.initial.phi, rc.packet_width, rc.seam_tol);
  const long reports = commensurate(T, rc.dt_report, "micro_run T / dt_report");
  r.mf_per_report = commensurate(rc.dt_report, rc.mf_dt, "micro_run dt_report / mf.dt");
  r.meanfield = model.run(rc.initial, T, rc.mf_dt);
  const SparseOperator h = assemble_hamiltonian(rc.lattice, rc.potentials, b, N, rc.micro);

  auto sample = [&](const CompositeState &s, std::size_t n) {
    MicroSample m;
    m.t = s.t;
    m.tracer = measure_tracer(rc.lattice, b, s, rc.micro.tracer_p);
    m.nb = number_moments(b, s.amplitudes);
    m.energy = energy_expectation(h, s.amplitudes);
    m.density = trace_distance(one_particle_density(rc.lattice, b, s), r.meanfield_at(n).phi);
    return m;
  };

  CompositeState s = r.initial.state;
  r.samples.push_back(sample(s, 0));
  if (keep_states) r.states.push_back(s);
  const double norm0 = s.amplitudes.norm();
  for (long n = 1; n <= reports; ++n) {
    s.amplitudes = expv(h, s.amplitudes, rc.dt_report, rc.micro.krylov, &r.krylov);
    s.t = n * rc.dt_report;
    const double drift = std::abs(s.amplitudes.norm() - norm0);
    if (drift > 1e-9) {
      std::ostringstream msg;
      msg << "micro_run: norm drifted by " << drift << " at t = " << s.t;
      throw std::runtime_error(msg.str());
    }
    r.samples.push_back(sample(s, static_cast<std::size_t>(n)));
    if (keep_states) r.states.push_back(s);
  }
  return r;
}

inline std::vector<std::string> micro_csv_header(int axes) {
  std::vector<std::string> h{"t"};
  for (int a = 0; a < axes; ++a) h.push_back("EX" + std::to_string(a));
  for (int a = 0; a < axes; ++a) h.push_back("EP_over_N" + std::to_string(a));
  for (const char *c : {"varX", "varV", "Nb_mean", "Nb_var", "energy", "trace_dist", "hs_dist"})
    h.push_back(c);
  return h;
}

inline std::vector<std::string> micro_csv_row(const MicroSample &m) {
  std::vector<std::string> r{fmt(m.t)};
  for (double x : m.tracer.X) r.push_back(fmt(x));
  for (double p : m.tracer.P_over_N) r.push_back(fmt(p));
  for (double v : {m.tracer.var_X, m.tracer.var_V, m.nb.mean, m.nb.variance, m.energy,
                   m.density.trace, m.density.hs})
    r.push_back(fmt(v));
  return r;
}

// ---------------------------------------------------------------------------
// Fluctuation runs

struct FluctuationSample {
  double t = 0.0;
  double norm = 0.0;
  double nb_mean = 0.0;
  GronwallSnapshot gronwall;
  double tail_norm = 0.0;
};

struct TruncatedFlowSample {
  double t = 0.0;
  double norm = 0.0;
  GronwallSnapshot gronwall;
  double hermiticity_defect = 0.0;
};

struct FluctuationRun {
  double N = 1.0;
  int n_max = 0;
  int M = 0;
  std::vector<FluctuationSample> plain;
  std::vector<TruncatedFlowSample> truncated;
};

// Omega_t = e^{-iS} W*(sqrt(N) phi_t) Psi_t at every report step, plus the
// truncated flow U^(M) from Omega_0 when `truncated_dt` is positive.
inline FluctuationRun fluctuation_run(const RunConfig &rc, double N, int M, double T,
                                      double truncated_dt = 0.0) {
  FluctuationRun fr;
  fr.N = N;
  fr.M = M;
  const MicroRun mr = micro_run(rc, N, T, true);
  fr.n_max = mr.n_max;
  const FockBasis b(static_cast<int>(rc.lattice.modes()), mr.n_max);
  const auto model = matched_model(rc);
  for (std::size_t n = 0; n < mr.states.size(); ++n) {
    const MeanFieldState &mf = mr.meanfield_at(n);
    const double S = scalar_phase(model, mr.meanfield, mf.t, N);
    const CompositeState om = fluctuation_state(b, mr.states[n], mf, S);
    FluctuationSample f;
    f.t = mf.t;
    f.norm = om.amplitudes.norm();
    f.nb_mean = number_moments(b, om.amplitudes).mean;
    f.gronwall = gronwall_snapshot(rc.lattice, b, om, mf);
    const auto parts = assemble_generator(model, b, N, mf, GeneratorVariant::derived, rc.micro);
    f.tail_norm = tail_norm(parts, b, om.amplitudes, M);
    fr.plain.push_back(f);
  }
  if (truncated_dt > 0.0) {
    const CompositeState om0 =
        fluctuation_state(b, mr.states.front(), mr.meanfield.front(), 0.0);
    TruncatedFlowOptions opt;
    opt.M = M;
    opt.dt = truncated_dt;
    opt.micro = rc.micro;
    const auto flow = truncated_flow(model, b, rc.initial, om0, T, rc.dt_report, opt);
    for (const auto &st : flow) {
      TruncatedFlowSample s;
      s.t = st.state.t;
      s.norm = st.state.amplitudes.norm();
      s.gronwall = gronwall_snapshot(rc.lattice, b, st.state, st.meanfield);
      s.hermiticity_defect = st.hermiticity_defect;
      fr.truncated.push_back(s);
    }
  }
  return fr;
}

inline std::vector<std::string> fluctuation_csv_header() {
  return {"t",     "Nb_mean", "Nb_sqrt_mom", "Nb_3half_mom", "g_total",
          "g_dx1", "g_dx3",   "g_dv1",       "g_dv3",        "tail_norm_M"};
}

inline std::vector<std::string> fluctuation_csv_row(const FluctuationSample &f) {
  const auto &g = f.gronwall;
  return {fmt(f.t),         fmt(f.nb_mean),   fmt(g.nb_moments[0]), fmt(g.nb_moments[1]),
          fmt(g.g_total),   fmt(g.sum_dx(0)), fmt(g.sum_dx(1)),     fmt(g.sum_dv(0)),
          fmt(g.sum_dv(1)), fmt(f.tail_norm)};
}

inline std::vector<std::string> truncated_csv_header() {
  return {"t",     "norm",  "Nb_sqrt_mom", "Nb_3half_mom", "g_total",
          "g_dx1", "g_dx3", "g_dv1",       "g_dv3",        "hermiticity_defect"};
}

inline std::vector<std::string> truncated_csv_row(const TruncatedFlowSample &f) {
  const auto &g = f.gronwall;
  return {fmt(f.t),         fmt(f.norm),      fmt(g.nb_moments[0]), fmt(g.nb_moments[1]),
          fmt(g.g_total),   fmt(g.sum_dx(0)), fmt(g.sum_dx(1)),     fmt(g.sum_dv(0)),
          fmt(g.sum_dv(1)), fmt(f.hermiticity_defect)};
}

// ---------------------------------------------------------------------------
// Convergence sweep

struct ConvergenceRow {
  double N = 1.0;
  int n_max = 0;
  Eigen::Index dim = 0;
  double err_X = 0.0;      // |<X>_T - X_T|
  double err_V = 0.0;      // |<P>_T / N - V_T|
  double err_trace = 0.0;  // Tr |Gamma_T - |phi_T><phi_T||
  double err_hs = 0.0;
  double fock_tail_mass = 0.0;
  double nb_drift = 0.0;  // max relative drift of <N_b>
  double runtime = 0.0;   // seconds; kept out of every emitted file
  bool ok = false;
  std::string error;
};

inline ConvergenceRow run_convergence_row(const RunConfig &rc, double N, double T) {
  ConvergenceRow row;
  row.N = N;
  const auto start = std::chrono::steady_clock::now();
  try {
    row.n_max = rc.n_max_for(N);
    const MicroRun r = micro_run(rc, N, T);
    row.dim = r.size.dim;
    row.fock_tail_mass = r.initial.fock_tail_mass;
    const MicroSample &last = r.samples.back();
    const MeanFieldState &mf = r.meanfield.back();
    double ex = 0.0, ev = 0.0;
    for (std::size_t a = 0; a < mf.X.size(); ++a) {
      ex += std::pow(wrap(last.tracer.X[a] - mf.X[a], rc.lattice.length), 2);
      ev += std::pow(last.tracer.P_over_N[a] - mf.V[a], 2);
    }
    row.err_X = std::sqrt(ex);
    row.err_V = std::sqrt(ev);
    row.err_trace = last.density.trace;
    row.err_hs = last.density.hs;
    const double nb0 = r.samples.front().nb.mean;
    for (const auto &s : r.samples)
      row.nb_drift = std::max(row.nb_drift, std::abs(s.nb.mean - nb0) / std::max(nb0, 1e-300));
    row.ok = true;
  } catch (const std::exception &e) {
    row.ok = false;
    row.error = e.what();
  }
  row.runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

struct RateFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();  // RMS of log residuals
  int points = 0;
  std::vector<std::string> warnings;
};

// Ordinary least squares of log(y) against log(x).
inline RateFit fit_rate(const std::vector<double> &x, const std::vector<double> &y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_rate: size mismatch");
  RateFit f;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(y[i])) {
      f.warnings.push_back("excluded point " + std::to_string(i) + " (x = " + fmt(x[i]) +
                           ", y = " + fmt(y[i]) + ")");
      continue;
    }
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  f.points = static_cast<int>(lx.size());
  if (f.points < 2) throw std::invalid_argument("fit_rate: fewer than two usable points");
  const double n = f.points;
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < f.points; ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < f.points; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_rate: abscissae are all equal");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (int i = 0; i < f.points; ++i) ss += std::pow(ly[i] - f.intercept - f.slope * lx[i], 2);
  f.residual = std::sqrt(ss / n);
  return f;
}

// ---------------------------------------------------------------------------
// Plans

struct ExperimentPlan {
  std::string config_path;
  KeyValueConfig overrides;  // set.<key> entries applied on top of the config
  std::vector<double> N_list{1, 2, 4};
  double T = 0.5;
  double dt = 1e-3;
  double dt_report = 0.05;
  std::uint64_t seed = 17;
  std::string out_dir;
  bool sweep = true;
  bool gronwall = true;
  bool moments = true;
  bool fluctuation = false;
  int M = -1;  // fluctuation cutoff; negative means n_max / 2
  std::vector<double> moment_N{1, 2, 4, 8};
  std::string canonical;

  static ExperimentPlan from_config(const KeyValueConfig &kv, const std::string &base_dir = ".") {
    ExperimentPlan p;
    p.canonical = kv.canonical();
    p.config_path = kv.get_string("config");
    if (!p.config_path.empty() && std::filesystem::path(p.config_path).is_relative())
      p.config_path = (std::filesystem::path(base_dir) / p.config_path).lexically_normal().string();
    p.N_list = kv.get_doubles("N_list", p.N_list);
    p.T = kv.get_double("T", p.T);
    p.dt = kv.get_double("dt", p.dt);
    p.dt_report = kv.get_double("dt_report", p.dt_report);
    p.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(p.seed)));
    p.out_dir = kv.get_string("out", "");
    p.sweep = kv.get_bool("sweep", p.sweep);
    p.gronwall = kv.get_bool("gronwall", p.gronwall);
    p.moments = kv.get_bool("moments", p.moments);
    p.fluctuation = kv.get_bool("fluctuation", p.fluctuation);
    p.M = static_cast<int>(kv.get_int("M", p.M));
    p.moment_N = kv.get_doubles("moment_N", p.moment_N);
    for (const auto &[k, v] : kv.entries())
      if (k.rfind("set.", 0) == 0) p.overrides.set(k.substr(4), v);
    if (p.N_list.empty()) throw std::invalid_argument("plan: N_list is empty");
    for (double N : p.N_list)
      if (!(N > 0.0)) throw std::invalid_argument("plan: N values must be positive");
    return p;
  }

  static ExperimentPlan load(const std::string &path) {
    const auto dir = std::filesystem::path(path).parent_path().string();
    return from_config(KeyValueConfig::load(path), dir.empty() ? "." : dir);
  }

  // Base config with overrides and the plan's T, dt and dt_report.
  RunConfig run_config() const {
    KeyValueConfig kv = KeyValueConfig::load(config_path);
    for (const auto &[k, v] : overrides.entries()) kv.set(k, v);
    kv.set("T", fmt(T));
    kv.set("mf.dt", fmt(dt));
    kv.set("dt_report", fmt(dt_report));
    return RunConfig::from_config(kv);
  }
};

struct PlanCheck {
  double N = 1.0;
  int n_max = 0;
  double mean_occupation = 0.0;
  PoissonTail tail;
  MicroSizeReport size;
  std::string problem;  // empty when admissible
};

// Coherent-tail and memory admissibility of every N in the plan.
inline std::vector<PlanCheck> check_plan(const ExperimentPlan &plan, const RunConfig &rc) {
  std::vector<PlanCheck> out;
  const double nrm = norm_l2(rc.initial.phi);
  for (double N : plan.N_list) {
    PlanCheck c;
    c.N = N;
    c.n_max = rc.n_max_for(N);
    c.mean_occupation = N * nrm * nrm;
    c.tail = poisson_tail(c.mean_occupation, c.n_max);
    const FockBasis b(static_cast<int>(rc.lattice.modes()), c.n_max);
    c.size = estimate_size(rc.lattice, b, rc.micro);
    try {
      check_coherent_tail(b, rc.initial.phi, N);
    } catch (const std::exception &e) {
      c.problem = e.what();
    }
    if (c.problem.empty() && c.size.bytes > rc.micro.memory_ceiling_bytes)
      c.problem = "exceeds the memory ceiling: " + c.size.str();
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void write_csv(const std::string &path, const CsvTable &t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto line = [&](const std::vector<std::string> &cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << "\n";
  };
  line(t.header);
  for (const auto &r : t.rows) line(r);
}

inline CsvTable read_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) t.header = cells;
    else t.rows.push_back(cells);
    first = false;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Regression

struct ColumnTolerance {
  double rel = 1e-6;
  double abs = 1e-12;
};

// Tolerances keyed by column name, or by "file.csv:column" for one file.
struct ToleranceTable {
  ColumnTolerance fallback;
  std::map<std::string, ColumnTolerance> columns;

  ColumnTolerance lookup(const std::string &file, const std::string &column) const {
    if (auto it = columns.find(file + ":" + column); it != columns.end()) return it->second;
    if (auto it = columns.find(column); it != columns.end()) return it->second;
    return fallback;
  }

  // Each entry reads "rel" or "rel,abs"; the key "default" sets the fallback.
  static ToleranceTable from_config(const KeyValueConfig &kv) {
    ToleranceTable t;
    for (const auto &[k, v] : kv.entries()) {
      const auto vals = kv.get_doubles(k);
      if (vals.empty() || vals.size() > 2)
        throw std::invalid_argument("tolerance " + k + ": expected rel or rel,abs");
      ColumnTolerance c{vals[0], vals.size() > 1 ? vals[1] : t.fallback.abs};
      if (k == "default") t.fallback = c;
      else t.columns[k] = c;
    }
    return t;
  }
};

struct RegressionReport {
  bool pass = true;
  std::vector<std::string> messages;
  std::string str() const {
    std::string s;
    for (const auto &m : messages) s += m + "\n";
    s += pass ? "regression: PASS\n" : "regression: FAIL\n";
    return s;
  }
};

inline std::optional<double> parse_cell(const std::string &s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception &) {
  }
  return std::nullopt;
}

inline void compare_tables(const std::string &name, const CsvTable &cur, const CsvTable &gold,
                           const ToleranceTable &tol, RegressionReport &rep) {
  if (cur.header != gold.header) {
    rep.pass = false;
    std::string a, b;
    for (const auto &h : gold.header) a += h + ",";
    for (const auto &h : cur.header) b += h + ",";
    rep.messages.push_back(name + ": schema mismatch\n  golden:  " + a + "\n  current: " + b);
    return;
  }
  if (cur.rows.size() != gold.rows.size()) {
    rep.pass = false;
    rep.messages.push_back(name + ": schema mismatch, " + std::to_string(gold.rows.size()) +
                           " golden rows vs " + std::to_string(cur.rows.size()) + " current");
    return;
  }
  for (std::size_t r = 0; r < gold.rows.size(); ++r) {
    if (cur.rows[r].size() != gold.header.size() || gold.rows[r].size() != gold.header.size()) {
      rep.pass = false;
      rep.messages.push_back(name + ": row " + std::to_string(r + 1) + " has the wrong width");
      continue;
    }
    for (std::size_t c = 0; c < gold.header.size(); ++c) {
      const auto &g = gold.rows[r][c];
      const auto &x = cur.rows[r][c];
      const auto gv = parse_cell(g), xv = parse_cell(x);
      bool same;
      if (gv && xv) {
        if (std::isnan(*gv) || std::isnan(*xv)) {
          same = std::isnan(*gv) && std::isnan(*xv);
        } else {
          const auto t = tol.lookup(name, gold.header[c]);
          same = std::abs(*gv - *xv) <= t.rel * std::max(std::abs(*gv), std::abs(*xv)) + t.abs;
        }
      } else {
        same = g == x;
      }
      if (!same) {
        rep.pass = false;
        rep.messages.push_back(name + ": column " + gold.header[c] + " row " +
                               std::to_string(r + 1) + ": golden " + g + ", current " + x);
      }
    }
  }
}

// Compares every CSV of `golden_dir` with the same file in `current_dir`.
// Tolerances come from golden_dir/tolerances.cfg when present.
inline RegressionReport regression_check(const std::string &current_dir,
                                         const std::string &golden_dir,
                                         std::optional<ToleranceTable> tol = std::nullopt) {
  namespace fs = std::filesystem;
  RegressionReport rep;
  if (!fs::is_directory(golden_dir))
    throw std::invalid_argument("regression_check: no golden directory " + golden_dir);
  if (!tol) {
    const auto tf = fs::path(golden_dir) / "tolerances.cfg";
    tol = fs::exists(tf) ? ToleranceTable::from_config(KeyValueConfig::load(tf.string()))
                         : ToleranceTable{};
  }
  std::vector<std::string> names;
  for (const auto &e : fs::directory_iterator(golden_dir))
    if (e.path().extension() == ".csv") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::invalid_argument("regression_check: golden directory has no CSV files");
  for (const auto &n : names) {
    const auto cur = fs::path(current_dir) / n;
    if (!fs::exists(cur)) {
      rep.pass = false;
      rep.messages.push_back(n + ": missing from " + current_dir);
      continue;
    }
    compare_tables(n, read_csv(cur.string()), read_csv((fs::path(golden_dir) / n).string()),
                   *tol, rep);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Sweep and report

struct GronwallRow {
  double N = 1.0;
  GronwallSnapshot snapshot;
};

struct MomentRow {
  double N = 1.0;
  PacketMoments moments;
  std::string error;  // packet refused on this lattice
};

struct SweepGates {
  bool err_X_decreasing = false;
  bool err_trace_decreasing = false;
  bool trace_slope_negative = false;
  bool trace_dominated = false;  // err_trace <= 2 err_hs on every row
  bool all_rows_ok = false;

  bool pass() const {
    return err_X_decreasing && err_trace_decreasing && trace_slope_negative && trace_dominated &&
           all_rows_ok;
  }
};

struct ExperimentResult {
  std::vector<PlanCheck> checks;
  std::vector<ConvergenceRow> rows;
  std::map<std::string, RateFit> fits;  // err_X, err_V, err_trace, err_hs
  SweepGates gates;
  std::vector<GronwallRow> gronwall;
  std::vector<MomentRow> moments;
  std::vector<FluctuationRun> fluctuation;
};

inline bool strictly_decreasing(const std::vector<double> &v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return !v.empty();
}

inline SweepGates evaluate_gates(const std::vector<ConvergenceRow> &rows,
                                 const std::map<std::string, RateFit> &fits) {
  SweepGates g;
  std::vector<double> ex, et;
  g.all_rows_ok = !rows.empty();
  g.trace_dominated = true;
  for (const auto &r : rows) {
    g.all_rows_ok = g.all_rows_ok && r.ok;
    if (!r.ok) continue;
    ex.push_back(r.err_X);
    et.push_back(r.err_trace);
    g.trace_dominated = g.trace_dominated && r.err_trace <= 2.0 * r.err_hs * (1.0 + 1e-12);
  }
  g.err_X_decreasing = g.all_rows_ok && strictly_decreasing(ex);
  g.err_trace_decreasing = g.all_rows_ok && strictly_decreasing(et);
  if (auto it = fits.find("err_trace"); it != fits.end())
    g.trace_slope_negative = it->second.slope < 0.0;
  return g;
}

inline std::map<std::string, RateFit> fit_rows(const std::vector<ConvergenceRow> &rows) {
  std::map<std::string, RateFit> fits;
  std::vector<double> n;
  std::map<std::string, std::vector<double>> cols;
  for (const auto &r : rows) {
    if (!r.ok) continue;
    n.push_back(r.N);
    cols["err_X"].push_back(r.err_X);
    cols["err_V"].push_back(r.err_V);
    cols["err_trace"].push_back(r.err_trace);
    cols["err_hs"].push_back(r.err_hs);
  }
  for (const auto &[name, y] : cols) {
    try {
      fits[name] = fit_rate(n, y);
    } catch (const std::exception &e) {
      RateFit f;
      f.warnings.push_back(e.what());
      fits[name] = f;
    }
  }
  return fits;
}

// Convergence rows for every N; a failing row is recorded, not thrown.
inline std::vector<ConvergenceRow> run_convergence_sweep(const RunConfig &rc,
                                                         const std::vector<double> &N_list,
                                                         double T) {
  std::vector<ConvergenceRow> rows;
  for (double N : N_list) rows.push_back(run_convergence_row(rc, N, T));
  return rows;
}

// g at t = 0 on the fluctuation state of the Condition-1 data.
inline GronwallRow initial_gronwall(const RunConfig &rc, double N) {
  const FockBasis b(static_cast<int>(rc.lattice.modes()), rc.n_max_for(N));
  const auto init = build_initial(rc.lattice, rc.potentials, b, N, rc.initial.X, rc.initial.V,
                                  rc.initial.phi, rc.packet_width, rc.seam_tol);
  const auto om = fluctuation_state(b, init.state, init.meanfield, 0.0);
  return {N, gronwall_snapshot(rc.lattice, b, om, init.meanfield)};
}

inline ExperimentResult run_experiment(const ExperimentPlan &plan, const RunConfig &rc) {
  ExperimentResult res;
  res.checks = check_plan(plan, rc);
  if (plan.sweep) {
    res.rows = run_convergence_sweep(rc, plan.N_list, plan.T);
    res.fits = fit_rows(res.rows);
    res.gates = evaluate_gates(res.rows, res.fits);
  }
  if (plan.gronwall)
    for (double N : plan.N_list) res.gronwall.push_back(initial_gronwall(rc, N));
  if (plan.moments)
    for (double N : plan.moment_N) {
      MomentRow m{N, {}, {}};
      try {
        m.moments = tracer_packet(rc.lattice, N, rc.initial.X, rc.initial.V, rc.packet_width,
                                  rc.seam_tol)
                        .moments;
      } catch (const std::invalid_argument &e) {
        m.error = e.what();
      }
      res.moments.push_back(m);
    }
  if (plan.fluctuation)
    for (double N : plan.N_list) {
      const int nm = rc.n_max_for(N);
      res.fluctuation.push_back(fluctuation_run(rc, N, plan.M < 0 ? nm / 2 : plan.M, plan.T));
    }
  return res;
}

inline std::string gate_word(bool ok) { return ok ? "pass" : "FAIL"; }

// Writes summary.txt and the CSV bundle into `dir`; returns the summary text.
// Nothing time- or host-dependent enters the files.
inline std::string emit_report(const ExperimentPlan &plan, const RunConfig &rc,
                               const ExperimentResult &res, const std::string &dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream s;
  s << "mflab report\n";
  s << "version " << MFLAB_VERSION << "\n";
  s << "config_hash " << hex64(rc.hash()) << "\n";
  s << "plan_hash " << hex64(fnv1a64(plan.canonical)) << "\n";
  s << "seed " << plan.seed << "\n";
  s << "T " << fmt(plan.T) << " dt " << fmt(plan.dt) << " dt_report " << fmt(plan.dt_report)
    << "\n";
  s << "N_list";
  for (double N : plan.N_list) s << " " << fmt(N);
  s << "\n";
  s << "toggles sweep=" << plan.sweep << " gronwall=" << plan.gronwall
    << " moments=" << plan.moments << " fluctuation=" << plan.fluctuation << "\n";

  const bool any = plan.sweep || plan.gronwall || plan.moments || plan.fluctuation;
  if (!any) {
    const auto text = s.str();
    std::ofstream(fs::path(dir) / "summary.txt") << text;
    return text;
  }

  const auto &L = rc.lattice;
  s << "\nlattice dim " << L.dim << " length " << fmt(L.length) << " sites " << L.sites
    << " h " << fmt(L.spacing()) << " tracer_sites " << L.tracer_sites << " h_X "
    << fmt(L.tracer_spacing()) << " tracers " << L.tracer_count << "\n";
  s << "packet width " << fmt(rc.packet_width) << " seam_tol " << fmt(rc.seam_tol)
    << " tracer_p " << (rc.micro.tracer_p == TracerMomentum::spectral ? "spectral" : "central")
    << "\n";
  s << "\ntail diagnostics (N, n_max, mean occupation, Poisson mass above n_max, composite dim)\n";
  for (const auto &c : res.checks)
    s << "  " << fmt(c.N) << " " << c.n_max << " " << fmt(c.mean_occupation) << " "
      << fmt(c.tail.mass) << " " << c.size.dim << (c.problem.empty() ? "" : "  REFUSED: ")
      << c.problem << "\n";

  if (plan.sweep) {
    CsvTable t{{"N", "n_max", "dim", "err_X", "err_V", "err_trace", "err_hs", "fock_tail_mass",
                "nb_drift", "status"},
               {}};
    s << "\nconvergence at T = " << fmt(plan.T) << "\n";
    for (const auto &r : res.rows) {
      t.rows.push_back({fmt(r.N), std::to_string(r.n_max), std::to_string(r.dim), fmt(r.err_X),
                        fmt(r.err_V), fmt(r.err_trace), fmt(r.err_hs), fmt(r.fock_tail_mass),
                        fmt(r.nb_drift), r.ok ? "ok" : "failed"});
      s << "  N " << fmt(r.N) << (r.ok ? "" : " FAILED: " + r.error) << "  err_X " << fmt(r.err_X)
        << " err_V " << fmt(r.err_V) << " err_trace " << fmt(r.err_trace) << " err_hs "
        << fmt(r.err_hs) << "\n";
    }
    write_csv((fs::path(dir) / "convergence.csv").string(), t);
    CsvTable ft{{"quantity", "slope", "intercept", "residual", "points"}, {}};
    s << "log-log fits against N\n";
    for (const auto &[name, f] : res.fits) {
      ft.rows.push_back({name, fmt(f.slope), fmt(f.intercept), fmt(f.residual),
                         std::to_string(f.points)});
      s << "  " << name << " slope " << fmt(f.slope) << " residual " << fmt(f.residual) << "\n";
      for (const auto &w : f.warnings) s << "    warning: " << w << "\n";
    }
    write_csv((fs::path(dir) / "fit.csv").string(), ft);
    const auto &g = res.gates;
    s << "gates: err_X decreasing " << gate_word(g.err_X_decreasing) << ", err_trace decreasing "
      << gate_word(g.err_trace_decreasing) << ", err_trace slope < 0 "
      << gate_word(g.trace_slope_negative) << ", err_trace <= 2 err_hs "
      << gate_word(g.trace_dominated) << ", rows completed " << gate_word(g.all_rows_ok) << "\n";
  }

  if (plan.gronwall) {
    CsvTable t{{"N", "g_total", "g_total_N3", "g_dx1", "g_dx3", "g_dv1", "g_dv3", "Nb_sqrt_mom",
                "Nb_3half_mom"},
               {}};
    s << "\nGronwall functional at t = 0 (N, g_total, g_total * N^3)\n";
    for (const auto &r : res.gronwall) {
      const auto &g = r.snapshot;
      const double n3 = g.g_total * r.N * r.N * r.N;
      t.rows.push_back({fmt(r.N), fmt(g.g_total), fmt(n3), fmt(g.sum_dx(0)), fmt(g.sum_dx(1)),
                        fmt(g.sum_dv(0)), fmt(g.sum_dv(1)), fmt(g.nb_moments[0]),
                        fmt(g.nb_moments[1])});
      s << "  " << fmt(r.N) << " " << fmt(g.g_total) << " " << fmt(n3) << "\n";
    }
    write_csv((fs::path(dir) / "gronwall0.csv").string(), t);
  }

  if (plan.moments) {
    CsvTable t{{"N", "p", "position", "velocity", "position_scaled", "velocity_scaled"}, {}};
    s << "\npacket moments ||(X - X0)^p u||, ||(P/N - V0)^p u|| scaled by N^{p/2}\n";
    for (const auto &r : res.moments) {
      if (!r.error.empty()) {
        s << "  N " << fmt(r.N) << " refused: " << r.error << "\n";
        continue;
      }
      for (int p = 1; p <= 3; ++p) {
        const double sc = std::pow(r.N, 0.5 * p);
        const double a = r.moments.position[p - 1], v = r.moments.velocity[p - 1];
        t.rows.push_back({fmt(r.N), std::to_string(p), fmt(a), fmt(v), fmt(a * sc), fmt(v * sc)});
        s << "  N " << fmt(r.N) << " p " << p << " " << fmt(a * sc) << " " << fmt(v * sc) << "\n";
      }
    }
    write_csv((fs::path(dir) / "moments.csv").string(), t);
  }

  if (plan.fluctuation) {
    s << "\nfluctuation runs (N, n_max, M, <N_b> at T, <N_b>/N^{1/2}, ||(N_b+1)^{1/2}Omega||^2 at T)\n";
    for (const auto &f : res.fluctuation) {
      CsvTable t{fluctuation_csv_header(), {}};
      for (const auto &x : f.plain) t.rows.push_back(fluctuation_csv_row(x));
      write_csv((fs::path(dir) / ("fluctuation_N" + label(f.N) + ".csv")).string(), t);
      const auto &last = f.plain.back();
      s << "  " << fmt(f.N) << " " << f.n_max << " " << f.M << " " << fmt(last.nb_mean) << " "
        << fmt(last.nb_mean / std::sqrt(f.N)) << " " << fmt(last.gronwall.nb_moments[0]) << "\n";
    }
  }

  const auto text = s.str();
  std::ofstream(fs::path(dir) / "summary.txt") << text;
  return text;
}

}  // namespace mflab

#endif  // MFLAB_HARNESS_HPP
