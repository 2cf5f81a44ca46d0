#pragma once

// Executes a scenario and writes its artifacts plus a run manifest.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "qbcast/envelope.hpp"
#include "qbcast/fock.hpp"
#include "qbcast/nlv.hpp"
#include "qbcast/protocol.hpp"
#include "qbcast/scenario.hpp"
#include "qbcast/wigner.hpp"

namespace qbcast {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

struct RunOptions {
  unsigned workers = 1;
  std::string version = "dev";
  std::optional<std::string> out_dir;  // overrides output.path
};

struct RunReport {
  std::filesystem::path dir;
  std::vector<std::string> files;
};

/// Column-major numeric table; written as CSV or as {"columns", "rows"} JSON.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, OutputFormat fmt) : dir_(std::move(dir)), fmt_(fmt) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  void text(const std::string& name, const std::string& body) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (dir_ / name).string());
    f << body;
    if (!f) throw Error("write failed: " + (dir_ / name).string());
    files_.push_back(name);
  }

  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

  // stem.csv or stem.json depending on the output format
  void table(const std::string& stem, const Table& t) {
    if (fmt_ == OutputFormat::Json) {
      json j;
      j["columns"] = t.columns;
      j["rows"] = t.rows;
      json_file(stem + ".json", j);
      return;
    }
    std::string s;
    for (std::size_t i = 0; i < t.columns.size(); ++i) s += (i ? "," : "") + t.columns[i];
    s += "\n";
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) s += ",";
        s += format_number(r[i]);
      }
      s += "\n";
    }
    text(stem + ".csv", s);
  }

  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  OutputFormat fmt_;
  std::vector<std::string> files_;
};

inline void require_finite(const NlvParabola& p) {
  if (!std::isfinite(p.c0) || !std::isfinite(p.c1) || !std::isfinite(p.c2))
    throw NumericalError("nonlinear variance is not finite");
}

inline json intervals_json(const std::vector<LambdaInterval>& v) {
  json a = json::array();
  for (const auto& iv : v) a.push_back(json::array({iv.lo, iv.hi}));
  return a;
}

inline void write_parabola(ArtifactWriter& w, const NlvParabola& p, const std::vector<double>& grid) {
  require_finite(p);
  const Classification c = classify(p, grid);
  json j;
  j["c0"] = p.c0;
  j["c1"] = p.c1;
  j["c2"] = p.c2;
  j["lambda_min"] = p.lambda_min();
  j["sigma_min"] = p.sigma_min();
  j["classification"] = {{"nonclassical", c.nonclassical},
                         {"non_gaussian", c.non_gaussian},
                         {"squeezed", c.squeezed},
                         {"nc_intervals", intervals_json(c.nc_intervals)},
                         {"ng_intervals", intervals_json(c.ng_intervals)},
                         {"sq_intervals", intervals_json(c.sq_intervals)}};
  w.json_file("parabola.json", j);
  Table t{{"lambda", "sigma", "sigma_nc", "sigma_ng", "sigma_sq"}, {}};
  for (double l : grid) t.rows.push_back({l, p(l), threshold_nc(l), threshold_ng(l), threshold_sq(l)});
  w.table("nlv_curve", t);
}

inline void write_moments(ArtifactWriter& w, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    if (!std::isfinite(mean(i))) throw NumericalError("moments are not finite");
  if (!cov.allFinite()) throw NumericalError("moments are not finite");
  json j;
  j["quadratures"] = {kQuadratureNames[0], kQuadratureNames[1], kQuadratureNames[2], kQuadratureNames[3]};
  j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
  json c = json::array();
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < cov.cols(); ++k) row.push_back(cov(i, k));
    c.push_back(row);
  }
  j["covariance"] = c;
  w.json_file("moments.json", j);
}

inline SymbolicState moments_state(const Scenario& s) {
  if (!s.has_channel) return run_unitary_protocol(s.regime, s.gamma, s.order, s.target, s.source);
  const auto gates = gate_settings(s);
  return run_noisy_protocol(s.regime, s.gamma, s.order, gates, s.channel.gain_mode, s.target, s.source,
                            s.channel.final_readout);
}

inline json run_moments(const Scenario& s, const RunOptions& opt, ArtifactWriter& w) {
  json info = json::object();
  switch (s.analysis.kind) {
    case AnalysisKind::NlvParabola: {
      const SymbolicState st = moments_state(s);
      write_parabola(w, compute_nlv(st, s.order), s.analysis.lambda_grid.values());
      break;
    }
    case AnalysisKind::Moments: {
      const SymbolicState st = moments_state(s);
      std::array<const QuadPoly*, 4> ps{&st.exprs[0], &st.exprs[1], &st.exprs[2], &st.exprs[3]};
      Eigen::VectorXd mean(4);
      for (std::size_t i = 0; i < 4; ++i) mean(static_cast<Eigen::Index>(i)) = gaussian_expectation(st.exprs[i], st.ensemble);
      write_moments(w, mean, gaussian_covariances(ps, st.ensemble));
      break;
    }
    case AnalysisKind::NlvEnvelope: {
      const auto& a = s.analysis;
      const EnvelopeSystem sys = envelope_system(s);
      EnvelopeOptions eo;
      eo.coarse_points = a.coarse_points;
      eo.coarse_cap = a.coarse_cap;
      eo.starts = a.starts;
      eo.budget = a.budget;
      eo.sweeps = a.sweeps;
      eo.seed = s.seed;
      eo.workers = opt.workers;
      eo.nm = a.nelder_mead;
      const auto grid = a.lambda_grid.values();
      const EnvelopeResult r = compute_envelope(sys, grid, a.bounds, eo);
      Table t;
      t.columns = {"lambda", "sigma_env", "sigma_nc", "sigma_ng", "flag_nc", "flag_ng"};
      for (int g = 1; g <= 4; ++g) t.columns.push_back("argmin_g" + std::to_string(g));
      for (const auto& n : r.layout.names) t.columns.push_back("control_" + n);
      for (const auto& p : r.points) {
        if (!std::isfinite(p.sigma_env) || p.argmin.empty())
          throw NumericalError("no feasible control point at lambda = " + format_number(p.lambda));
        std::vector<double> row{p.lambda, p.sigma_env, threshold_nc(p.lambda), threshold_ng(p.lambda),
                                p.flag_nc ? 1.0 : 0.0, p.flag_ng ? 1.0 : 0.0};
        for (double g : realized_gains(r.layout, sys, p.argmin)) row.push_back(g);
        row.insert(row.end(), p.argmin.begin(), p.argmin.end());
        t.rows.push_back(std::move(row));
      }
      w.table("envelope", t);
      info["controls"] = r.layout.names;
      info["coarse_points_evaluated"] = r.coarse_size;
      info["objective_evaluations"] = r.evaluations;
      break;
    }
    case AnalysisKind::Wigner: throw ValidationError("wigner analysis needs the fock engine", "analysis.kind");
  }
  return info;
}

inline FockProtocolSpec fock_spec(const Scenario& s) {
  FockProtocolSpec f;
  f.regime = s.regime;
  f.gamma = s.gamma;
  f.order = s.order;
  f.rates = s.fock_channel.rates;
  f.T_gate = s.fock_channel.T_gate;
  f.N = s.fock.N;
  f.target = s.target;
  f.source = s.source;
  f.ode.atol = s.fock.atol;
  f.ode.rtol = s.fock.rtol;
  f.ode.tail_guard = s.fock.tail_guard;
  return f;
}

inline json run_fock(const Scenario& s, const RunOptions& opt, ArtifactWriter& w) {
  const FockProtocolResult res = run_fock_protocol(fock_spec(s));
  json info;
  info["ode_steps_accepted"] = res.ode.accepted;
  info["ode_steps_rejected"] = res.ode.rejected;
  info["tail_population_final"] = {tail_population(res.rho_final, 0), tail_population(res.rho_final, 1)};
  switch (s.analysis.kind) {
    case AnalysisKind::NlvParabola:
      write_parabola(w, fock_nlv(partial_trace(res.rho_final, 0), s.order), s.analysis.lambda_grid.values());
      break;
    case AnalysisKind::Moments: {
      const FockMoments m = quadrature_moments(res.rho_final);
      write_moments(w, m.mean, m.cov);
      break;
    }
    case AnalysisKind::Wigner: {
      const auto& a = s.analysis;
      struct Job {
        std::string checkpoint, mode;
        WignerGrid grid;
      };
      std::vector<Job> jobs;
      for (const auto& c : a.checkpoints)
        for (const auto& m : a.modes) jobs.push_back({c, m, {}});
      parallel_for(jobs.size(), opt.workers, [&](std::size_t i) {
        const FockDensity& rho = jobs[i].checkpoint == "after_nl" ? res.rho_after_nl : res.rho_final;
        jobs[i].grid = wigner(partial_trace(rho, jobs[i].mode == "target" ? 0 : 1), a.grid);
      });
      json summary = json::object();
      for (const auto& j : jobs) {
        const NegativityMetrics nm = negativity_metrics(j.grid);
        const double two_pi = 2.0 * std::numbers::pi;
        Table t{{"X", "Y", "w2pi"}, {}};
        for (int iy = 0; iy < a.grid.ny; ++iy)
          for (int ix = 0; ix < a.grid.nx; ++ix) t.rows.push_back({a.grid.x(ix), a.grid.y(iy), two_pi * j.grid.values(iy, ix)});
        w.table("wigner_" + j.checkpoint + "_" + j.mode, t);
        summary[j.checkpoint][j.mode] = {{"min_value", nm.min_value},
                                         {"min_w2pi", two_pi * nm.min_value},
                                         {"negative_volume", nm.negative_volume},
                                         {"integral", j.grid.integral()},
                                         {"coarse", j.grid.coarse}};
      }
      w.json_file("wigner_summary.json", summary);
      break;
    }
    case AnalysisKind::NlvEnvelope:
      throw ValidationError("nlv-envelope analysis needs the moments engine", "analysis.kind");
  }
  return info;
}

}  // namespace detail

/// Runs the scenario and writes every artifact; the manifest is written last.
inline RunReport run_scenario(const Scenario& s, const RunOptions& opt = {}) {
  detail::ArtifactWriter w(opt.out_dir.value_or(s.output_path), s.format);
  const json info = s.engine == Engine::Moments ? detail::run_moments(s, opt, w) : detail::run_fock(s, opt, w);
  json m;
  m["tool"] = "qbcast";
  m["version"] = opt.version;
  m["seed"] = s.seed;
  m["scenario"] = serialize_scenario(s);
  m["results"] = info;
  m["files"] = w.files();
  w.json_file("manifest.json", m);
  return {w.dir(), w.files()};
}

/// Exit status for an exception escaping a run or a parse.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DegreeCapError*>(&e)) return kExitValidation;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitFailure;
}

}  // namespace qbcast
