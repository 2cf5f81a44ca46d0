// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "qbcast/envelope.hpp"
#include "qbcast/fock.hpp"
#include "qbcast/nlv.hpp"
#include "qbcast/oracle.hpp"
#include "qbcast/protocol.hpp"
#include "qbcast/runner.hpp"
#include "qbcast/scenario.hpp"
#include "qbcast/wigner.hpp"
#include "support.hpp"

using namespace qbcast;

namespace {

// tolerances
constexpr double kCoefTol = 1e-12;       // 1
constexpr double kClosedFormTol = 1e-10; // 2
constexpr double kThresholdTol = 1e-12;  // 3
constexpr double kLambdaTol = 2e-3;      // 4
constexpr double kFloorTol = 1e-9;       // 4, 5
constexpr double kMcSigmas = 3.0;        // 6
constexpr int kMcMaxFailures = 2;        // 6
constexpr double kDecayTol = 1e-6;       // 7
constexpr double kCrossTol = 1e-3;       // 8
constexpr double kAtomNegMax = -1e-2;    // 9, in 2piW units
constexpr double kMechNegMin = -1e-3;    // 9
constexpr double kDepthRatio = 5.0;      // 9
constexpr double kEnvelopeTol = 1e-9;    // 10

constexpr double kTwoPi = 2 * std::numbers::pi;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[64];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

Outcome broadcast_identity() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ug(0.1, 3.0), ugam(-0.5, 0.5), sign(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double g = (sign(rng) < 0 ? -1.0 : 1.0) * ug(rng), gamma = ugam(rng);
    const SymbolicState s = run_unitary_protocol({RegimeKind::FullBroadcast, g}, gamma, 3);
    const VarIndex X = s.initial[kX], Y = s.initial[kY];
    QuadPoly wx = QuadPoly::variable(X, s[kX].degree_cap());
    QuadPoly wy = QuadPoly::variable(Y, s[kY].degree_cap());
    wy.add_term(Monomial{X, X}, -gamma * g * g * g);
    worst = std::max({worst, max_abs_difference(s[kX], wx), max_abs_difference(s[kY], wy)});
  }
  return {worst <= kCoefTol, "max coefficient error " + fmt("%.2e", worst)};
}

Outcome nlv_closed_forms() {
  double worst = 0.0;
  const auto grid = linspace(0.0, 1.2, 121);
  const NlvParabola ground = compute_nlv(make_initial_state(), 3);
  for (double l : grid) worst = std::max(worst, std::abs(ground(l) - (1 + 2 * l * l)));
  for (double n : {0.0, 0.45, 3.0})
    for (double s : {0.4, 1.0, 2.5}) {
      // Var X = (2n+1) s, Var Y = (2n+1) / s
      const GaussianModeState st = GaussianModeState::squeezed_thermal(n, 1.0 / s);
      const NlvParabola p = compute_nlv(make_initial_state(st, st), 3);
      const double m = 2 * n + 1;
      for (double l : grid) worst = std::max(worst, std::abs(p(l) - (m / s + 2 * std::pow(l * s * m, 2))));
    }
  for (double gamma : {0.07, 0.15, 0.6}) {
    const SymbolicState s0 = make_initial_state({}, GaussianModeState::squeezed_thermal(0.45, 0.7));
    const NlvParabola before = compute_source_nlv(s0, 3);
    const NlvParabola after = compute_source_nlv(apply_nonlinearity(s0, gamma, 3), 3);
    for (double l : grid) worst = std::max(worst, std::abs(after(l) - before(l - gamma)));
  }
  return {worst <= kClosedFormTol, "max deviation " + fmt("%.2e", worst)};
}

Outcome thresholds() {
  bool ok = std::abs(threshold_nc(0.5) - 1.5) <= kThresholdTol && std::abs(threshold_ng(0.5) - 1.5) <= kThresholdTol;
  for (double l : linspace(1e-4, 0.5 - 1e-4, 2000)) ok &= threshold_ng(l) < threshold_nc(l);
  for (double l : linspace(0.0, 0.5, 2001)) ok &= !(threshold_ng(l) > threshold_nc(l) + kThresholdTol);
  return {ok, "sigma_NC(1/2) = " + fmt("%.15g", threshold_nc(0.5)) + ", sigma_NG(1/2) = " + fmt("%.15g", threshold_ng(0.5))};
}

Outcome broadcast_strength() {
  const NlvParabola p = compute_nlv(run_unitary_protocol({RegimeKind::FullBroadcast, 1.26}, 0.15, 3), 3);
  const bool ok = std::abs(p.lambda_min() - 0.300) <= kLambdaTol && std::abs(p.sigma_min() - 1.0) <= kFloorTol;
  return {ok, "lambda_min " + fmt("%.6f", p.lambda_min()) + ", sigma_min " + fmt("%.12f", p.sigma_min())};
}

Outcome squeezing_floor() {
  const double g = 1.26, g1 = 1.2, gamma = 0.15;
  RegimeSpec r{RegimeKind::SqueezingGeneration, g, g1};
  const NlvParabola p = compute_nlv(run_unitary_protocol(r, gamma, 3), 3);
  const double lb = gamma * g * g * g;
  const bool ok = std::abs(p.sigma_min() - 1 / (g1 * g1)) <= kFloorTol && std::abs(p(lb) - 1 / (g1 * g1)) <= kFloorTol;
  return {ok, "sigma_min " + fmt("%.12f", p.sigma_min()) + " at lambda " + fmt("%.6f", p.lambda_min())};
}

Outcome wick_vs_monte_carlo() {
  std::mt19937_64 rng(6);
  McConfig cfg;
  cfg.samples = 1'000'000;
  int fails = 0;
  for (int t = 0; t < 50; ++t) {
    const GaussianEnsemble e = testkit::random_ensemble(6, rng, t % 2 == 1);
    const QuadPoly p = testkit::random_poly(6, 4, 10, rng);
    cfg.seed = 7000 + static_cast<std::uint64_t>(t);
    const McEstimate mc = mc_expectation(p, e, cfg);
    if (std::abs(mc.estimate - gaussian_expectation(p, e)) > kMcSigmas * mc.std_error) ++fails;
  }
  return {fails <= kMcMaxFailures, std::to_string(fails) + "/50 outside 3 standard errors"};
}

double mean_number(const FockDensity& rho) { return expectation(rho, fock::number(rho.dim)).real(); }

Outcome lindblad_decay() {
  const int N = 30;
  struct Case {
    double zeta, n_th, T;
    FockDensity rho;
  };
  const std::vector<Case> cases{{0.0, 0.0, 1.0, fock_number_state(4, N)},
                                {0.5, 0.0, 2.0, fock_number_state(3, N)},
                                {1.0, 0.0, 1.0, gaussian_density(GaussianModeState::thermal(2.0), N)},
                                {0.2, 1.0, 1.5, fock_number_state(1, N)},
                                {1.0, 0.5, 10.0, fock_number_state(6, N)},
                                {1.0, 10.0, 0.05, fock_number_state(0, N)},
                                {1e-3, 10.0, 5.0, gaussian_density(GaussianModeState::thermal(0.5), N)},
                                {0.0, 10.0, 1.0, fock_number_state(2, N)}};
  double worst = 0.0;
  for (const auto& c : cases) {
    const FockDensity out = lindblad_evolve(c.rho, {N, 1, CMat::Zero(N, N)}, {0.0, c.zeta, c.n_th}, c.T);
    worst = std::max(worst, std::abs(mean_number(out) - decay_reference(mean_number(c.rho), c.zeta, c.n_th, c.T)));
  }
  return {worst <= kDecayTol, "max |<n> - reference| " + fmt("%.2e", worst)};
}

Outcome cross_engine() {
  FockProtocolSpec s;
  s.N = 40;
  s.gamma = 0.15;
  s.regime = {RegimeKind::FullBroadcast, 1.26};
  const FockProtocolResult r = run_fock_protocol(s);
  const SymbolicState m = run_unitary_protocol(s.regime, s.gamma, 3);
  const QuadPoly* ps[] = {&m.exprs[kX], &m.exprs[kY], &m.exprs[kQ], &m.exprs[kP]};
  Eigen::VectorXd mean;
  const Eigen::MatrixXd cov = gaussian_covariances(ps, m.ensemble, &mean);
  const FockMoments f = quadrature_moments(r.rho_final);
  const double dm = std::max((f.mean - mean).cwiseAbs().maxCoeff(), (f.cov - cov).cwiseAbs().maxCoeff());
  const NlvParabola want = compute_nlv(m, 3), got = fock_nlv(partial_trace(r.rho_final, 0), 3);
  double dn = 0.0;
  for (double l : linspace(0.0, 1.2, 25)) dn = std::max(dn, std::abs(got(l) - want(l)));
  return {dm <= kCrossTol && dn <= kCrossTol,
          "moments " + fmt("%.2e", dm) + ", nlv " + fmt("%.2e", dn)};
}

Outcome negativity_ordering() {
  const GaussianModeState mech = GaussianModeState::squeezed(0.1);
  FockProtocolSpec s;
  s.N = 40;
  s.gamma = 0.15;
  s.regime = {RegimeKind::FullBroadcast, 1.26};
  s.rates = {1e-3, 1e-6, 1e3};
  s.source = mech;
  const FockProtocolResult r = run_fock_protocol(s);
  const WignerGridSpec grid;
  const double atom = kTwoPi * negativity_metrics(wigner(partial_trace(r.rho_final, 0), grid)).min_value;
  const double mid = kTwoPi * negativity_metrics(wigner(partial_trace(r.rho_after_nl, 1), grid)).min_value;
  const FockDensity direct = apply_unitary(gaussian_density(mech, s.N), build_cubic_unitary(s.gamma, s.N));
  const double dir = kTwoPi * negativity_metrics(wigner(direct, grid)).min_value;
  const double depth_atom = std::max(0.0, -atom), depth_dir = std::max(0.0, -dir);
  const bool ok = atom <= kAtomNegMax && mid >= kMechNegMin && depth_atom >= kDepthRatio * depth_dir;
  return {ok, "2piW min: atoms " + fmt("%.4g", atom) + ", mechanics " + fmt("%.3g", mid) + ", direct " + fmt("%.3g", dir)};
}

Outcome envelope_structure() {
  const auto grid = linspace(0.0, 1.2, 50);
  const std::array<double, 3> etas{1.0, 0.99, 0.96};
  std::array<std::array<EnvelopeResult, 2>, 3> R;
  for (std::size_t e = 0; e < 3; ++e)
    for (int m = 0; m < 2; ++m) {
      EnvelopeSystem sys;
      sys.gamma = 0.07;
      sys.eta = etas[e];
      sys.Gamma_m = 1e-4;
      sys.tau = 1.0;
      sys.mode = m == 0 ? GainMode::Symmetric : GainMode::Asymmetric;
      sys.source = GaussianModeState::thermal(0.45);
      R[e][static_cast<std::size_t>(m)] = compute_envelope(sys, grid, {}, EnvelopeOptions{});
    }
  int asym_above = 0, lossless_mismatch = 0, non_monotone = 0, below_ng = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t e = 0; e < 3; ++e)
      if (R[e][1].points[i].sigma_env > R[e][0].points[i].sigma_env + kEnvelopeTol) ++asym_above;
    if (std::abs(R[0][0].points[i].sigma_env - R[0][1].points[i].sigma_env) > kEnvelopeTol) ++lossless_mismatch;
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t e = 0; e + 1 < 3; ++e)
        if (R[e][m].points[i].sigma_env > R[e + 1][m].points[i].sigma_env + kEnvelopeTol) ++non_monotone;
    if (R[0][0].points[i].sigma_env < threshold_ng(grid[i])) ++below_ng;
  }
  const bool ok = asym_above == 0 && lossless_mismatch == 0 && non_monotone == 0 && below_ng > 0;
  return {ok, "asym>sym " + std::to_string(asym_above) + ", lossless mismatch " + std::to_string(lossless_mismatch) +
                  ", loss non-monotone " + std::to_string(non_monotone) + ", noiseless points below sigma_NG " +
                  std::to_string(below_ng) + "/50"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const std::vector<std::string> scenarios{
      R"({"seed":11,"regime":{"kind":"squeezing-generation"},"nonlinearity":{"gamma":0.15},
          "channel":{"gain_mode":"asymmetric","eta":0.96,"Gamma_m":1e-4},"initial":{"source":{"kind":"thermal","n":0.45}},
          "analysis":{"kind":"nlv-envelope","lambda_grid":{"points":6},"coarse_points":5,"coarse_cap":500,"budget":150,"sweeps":1}})",
      R"({"regime":{"kind":"simplified","g":0.9},"nonlinearity":{"gamma":0.1},
          "channel":{"eta":0.95,"S":4,"nu_m":0.001,"final_readout":true},"analysis":{"kind":"nlv-parabola"}})",
      R"({"engine":"fock","regime":{"kind":"full-broadcast","g":1.0},"nonlinearity":{"gamma":0.1},
          "channel":{"zeta_a":0.01,"zeta_m":0.01,"n_th":0.5},"fock":{"N":20},
          "analysis":{"kind":"wigner","grid":{"nx":41,"ny":41}}})"};
  const auto root = std::filesystem::temp_directory_path() / "qbcast_acceptance_determinism";
  std::size_t compared = 0, differing = 0;
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    const Scenario s = parse_scenario(scenarios[k]);
    std::vector<RunReport> runs;
    for (unsigned workers : {1u, 1u, 3u}) {
      RunOptions o;
      o.workers = workers;
      o.out_dir = (root / (std::to_string(k) + "_" + std::to_string(runs.size()))).string();
      std::filesystem::remove_all(*o.out_dir);
      runs.push_back(run_scenario(s, o));
    }
    for (const auto& f : runs[0].files)
      for (std::size_t j = 1; j < runs.size(); ++j) {
        ++compared;
        if (slurp(runs[0].dir / f) != slurp(runs[j].dir / f)) ++differing;
      }
  }
  std::filesystem::remove_all(root);
  return {compared > 0 && differing == 0,
          std::to_string(differing) + " of " + std::to_string(compared) + " file comparisons differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"unitary broadcast identity", broadcast_identity},
      {"nonlinear variance closed forms", nlv_closed_forms},
      {"classification thresholds", thresholds},
      {"broadcast strength", broadcast_strength},
      {"squeezing-generation floor", squeezing_floor},
      {"Wick moments vs Monte Carlo", wick_vs_monte_carlo},
      {"master-equation decay", lindblad_decay},
      {"cross-engine agreement", cross_engine},
      {"Wigner negativity ordering", negativity_ordering},
      {"envelope structure", envelope_structure},
      {"byte-identical reruns", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
