#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qbcast/protocol.hpp"

using namespace qbcast;

namespace {

Eigen::Matrix4d A_qy(double g) {
  Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
  A(kX, kQ) = g;
  A(kP, kY) = -g;
  return A;
}

Eigen::Matrix4d A_px(double g) {
  Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
  A(kY, kP) = -g;
  A(kQ, kX) = g;
  return A;
}

// Outputs as M x - gamma * w * (u.x)^2 for the cubic case.
struct MatrixOracle {
  Eigen::Matrix4d M;
  Eigen::Vector4d w;
  Eigen::Vector4d u;
};

MatrixOracle matrix_oracle(const std::array<double, 4>& g, double gamma) {
  const Eigen::Matrix4d M1 = A_px(g[1]) * A_qy(g[0]);
  const Eigen::Matrix4d M2 = A_qy(g[3]) * A_px(g[2]);
  return {M2 * M1, gamma * M2.col(kP), M1.row(kQ).transpose()};
}

double oracle_coefficient(const MatrixOracle& o, std::size_t out, const Monomial& m, const SymbolicState& s) {
  auto slot = [&](VarIndex v) {
    for (std::size_t j = 0; j < 4; ++j)
      if (s.initial[j] == v) return j;
    return std::size_t{99};
  };
  if (m.degree() == 1) return o.M(out, slot(m[0]));
  if (m.degree() == 2) {
    const std::size_t a = slot(m[0]), b = slot(m[1]);
    return -o.w(out) * o.u(a) * o.u(b) * (a == b ? 1.0 : 2.0);
  }
  return 0.0;
}

double max_coefficient_error(const SymbolicState& s, const MatrixOracle& o) {
  double err = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto& [m, c] : s.exprs[i].terms()) err = std::max(err, std::abs(c - oracle_coefficient(o, i, m, s)));
    // every oracle term must also be present
    for (std::size_t a = 0; a < 4; ++a) {
      err = std::max(err, std::abs(o.M(i, a) - s.exprs[i].coefficient(s.initial[a])));
      for (std::size_t b = a; b < 4; ++b) {
        Monomial m{s.initial[a], s.initial[b]};
        err = std::max(err, std::abs(oracle_coefficient(o, i, m, s) - s.exprs[i].coefficient(m)));
      }
    }
  }
  return err;
}

QuadPoly var(const SymbolicState& s, std::size_t i) { return QuadPoly::variable(s.initial[i], s.degree_cap()); }

}  // namespace

TEST(IdealGates, QyExamples) {
  auto s0 = make_initial_state();
  auto s = apply_qnd_qy(s0, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.exprs[i], s0.exprs[i]);
  s = apply_qnd_qy(s0, 2.0);
  EXPECT_EQ(s.exprs[kX], var(s, kX) + 2.0 * var(s, kQ));
  EXPECT_EQ(s.exprs[kP], var(s, kP) - 2.0 * var(s, kY));
  EXPECT_EQ(s.exprs[kY], var(s, kY));
  EXPECT_EQ(s.exprs[kQ], var(s, kQ));
  s = apply_qnd_qy(apply_qnd_qy(s0, 0.7), -0.7);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(max_abs_difference(s.exprs[i], s0.exprs[i]), 1e-15);
}

TEST(IdealGates, PxExamples) {
  auto s0 = make_initial_state();
  auto s = apply_qnd_px(s0, 1.0);
  EXPECT_EQ(s.exprs[kQ], var(s, kQ) + var(s, kX));
  EXPECT_EQ(s.exprs[kY], var(s, kY) - var(s, kP));
  EXPECT_EQ(s.exprs[kX], var(s, kX));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 20; ++t) {
    auto st = apply_qnd_qy(apply_qnd_px(s0, u(rng)), u(rng));
    EXPECT_NEAR(linear_matrix(st).determinant(), 1.0, 1e-12);
    EXPECT_LT((commutation_matrix(st) - canonical_commutation()).norm(), 1e-12);
  }
}

TEST(IdealGates, NonlinearityExamples) {
  auto s0 = make_initial_state();
  auto s = apply_nonlinearity(s0, 0.0, 3);
  EXPECT_EQ(s.exprs[kP], s0.exprs[kP]);
  s = apply_nonlinearity(s0, 0.15, 3);
  EXPECT_EQ(s.exprs[kP], var(s, kP) - 0.15 * var(s, kQ).pow(2));
  const double g = 0.8;
  s = apply_nonlinearity(apply_qnd_px(s0, g), 0.15, 3);
  auto want = var(s, kP) - 0.15 * (var(s, kQ) + g * var(s, kX)).pow(2);
  EXPECT_LT(max_abs_difference(s.exprs[kP], want), 1e-15);
  EXPECT_THROW(apply_nonlinearity(s0, 0.1, 6), DegreeCapError);
  EXPECT_NO_THROW(apply_nonlinearity(make_initial_state({}, {}, 6), 0.1, 6));
}

TEST(Regime, Expansion) {
  RegimeSpec b{RegimeKind::FullBroadcast, 2.0};
  EXPECT_EQ(b.expand(), (std::array<double, 4>{-0.5, 2.0, -2.0, 0.5}));
  RegimeSpec s{RegimeKind::Simplified, 2.0};
  EXPECT_EQ(s.expand(), (std::array<double, 4>{0.0, 2.0, -2.0, 0.0}));
  RegimeSpec z{RegimeKind::SqueezingGeneration, 2.0, 4.0};
  EXPECT_EQ(z.expand(), (std::array<double, 4>{4.0, 1.75, -2.0, 0.5}));
  RegimeSpec zero{RegimeKind::FullBroadcast, 0.0};
  EXPECT_THROW(zero.expand(), ValidationError);
}

TEST(UnitaryProtocol, BroadcastExample) {
  const double g = 1.26, gamma = 0.15;
  auto s = run_unitary_protocol({RegimeKind::FullBroadcast, g}, gamma, 3);
  EXPECT_LT(max_abs_difference(s.exprs[kX], var(s, kX)), 1e-14);
  const double lam = s.exprs[kY].coefficient(Monomial{s.initial[kX], s.initial[kX]});
  EXPECT_NEAR(-lam, gamma * g * g * g, 1e-14);
  EXPECT_NEAR(-lam, 0.3, 1e-3);
  for (std::size_t i : {kX, kY}) {
    for (const auto& [m, c] : s.exprs[i].terms()) {
      EXPECT_EQ(m.power(s.initial[kQ]), 0u) << m.str();
      EXPECT_EQ(m.power(s.initial[kP]), 0u) << m.str();
    }
  }
}

TEST(UnitaryProtocol, ZeroGainsTouchOnlyP) {
  RegimeSpec r{RegimeKind::Custom};
  auto s = run_unitary_protocol(r, 0.3, 3);
  EXPECT_EQ(s.exprs[kX], var(s, kX));
  EXPECT_EQ(s.exprs[kY], var(s, kY));
  EXPECT_EQ(s.exprs[kP], var(s, kP) - 0.3 * var(s, kQ).pow(2));
}

TEST(UnitaryProtocol, CustomGainsMatchMatrixOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int t = 0; t < 100; ++t) {
    RegimeSpec r{RegimeKind::Custom};
    r.gains = {u(rng), u(rng), u(rng), u(rng)};
    const double gamma = 0.1 * (1 + u(rng));
    auto s = run_unitary_protocol(r, gamma, 3);
    EXPECT_LT(max_coefficient_error(s, matrix_oracle(r.gains, gamma)), 1e-12);
  }
}

// The general four-gate relations written out term by term.
TEST(UnitaryProtocol, CustomGainsMatchClosedForm) {
  const double g1 = 0.4, g2 = -1.3, g3 = 0.9, g4 = 2.1, gamma = 0.2;
  RegimeSpec r{RegimeKind::Custom};
  r.gains = {g1, g2, g3, g4};
  auto s = run_unitary_protocol(r, gamma, 3);
  auto X = var(s, kX), Y = var(s, kY), q = var(s, kQ), p = var(s, kP);
  auto Xf = (1 + g4 * (g2 + g3)) * X + (g4 + g1 * (1 + g4 * (g2 + g3))) * q;
  auto Yf = (1 + g1 * (g2 + g3)) * Y - (g2 + g3) * p + g3 * gamma * ((1 + g1 * g2) * q + g2 * X).pow(2);
  EXPECT_LT(max_abs_difference(s.exprs[kX], Xf), 1e-13);
  EXPECT_LT(max_abs_difference(s.exprs[kY], Yf), 1e-13);
}

TEST(UnitaryProtocol, SimplifiedAndSqueezingRegimes) {
  const double g = 1.1, g1 = 1.7, gamma = 0.12;
  auto s = run_unitary_protocol({RegimeKind::Simplified, g}, gamma, 3);
  auto X = var(s, kX), Y = var(s, kY), q = var(s, kQ), p = var(s, kP);
  EXPECT_LT(max_abs_difference(s.exprs[kX], X), 1e-14);
  EXPECT_LT(max_abs_difference(s.exprs[kY], Y - g * gamma * (q + g * X).pow(2)), 1e-13);

  s = run_unitary_protocol({RegimeKind::SqueezingGeneration, g, g1}, gamma, 3);
  auto Xf = (1 - 1 / (g * g1)) * X + g1 * q;
  EXPECT_LT(max_abs_difference(s.exprs[kX], Xf), 1e-13);
  EXPECT_LT(max_abs_difference(s.exprs[kY], p * (1 / g1) - g * gamma * (g * Xf).pow(2)), 1e-13);
}

TEST(UnitaryProtocol, HigherOrderNonlinearity) {
  const double g = 0.9, gamma = 0.05;
  auto s = run_unitary_protocol({RegimeKind::FullBroadcast, g}, gamma, 4);
  auto X = var(s, kX), Y = var(s, kY);
  EXPECT_LT(max_abs_difference(s.exprs[kY], Y - g * gamma * (g * X).pow(3)), 1e-13);
}

TEST(MeasurementFeedforward, Examples) {
  auto s0 = run_unitary_protocol({RegimeKind::Simplified, 1.2}, 0.0, 3);
  auto s = measurement_feedforward_final(s0, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.exprs[i], s0.exprs[i]);
  // replacing the last px gate with a readout of equivalent gain
  const double g = 1.2;
  auto before = apply_nonlinearity(apply_qnd_px(make_initial_state(), g), 0.1, 3);
  auto gate = apply_qnd_px(before, -g);
  auto ff = measurement_feedforward_final(before, g);
  EXPECT_LT(max_abs_difference(gate.exprs[kY], ff.exprs[kY]), 1e-15);
  EXPECT_EQ(ff.exprs[kX], before.exprs[kX]);
}

// ------------------------------------------------------------ hybrid channel

TEST(HybridChannel, ValidatesParams) {
  HybridChannelParams p;
  p.eta = 1.5;
  try {
    p.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.path(), "channel.eta");
  }
  p.eta = 1.0;
  p.S = 0.5;
  EXPECT_THROW(p.validate(), ValidationError);
  p.S = 2.0;
  p.eta_damp = {1.0, 0.9, 1.0, 1.0};
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(HybridChannel, StructureMatchesIdealGates) {
  for (GateType type : {GateType::Xp, GateType::Yq}) {
    HybridChannelParams p;
    p.g_a = 0.8;
    p.g_m = 1.3;
    p.eta = 0.7;
    p.S = 3.0;
    p.K = 0.55;
    auto s = apply_hybrid_qnd(make_initial_state(), p, type);
    const double Gm = p.g_a * p.g_m * std::sqrt(p.eta);
    const double Ga = p.K * p.g_m;
    Eigen::Matrix4d want = type == GateType::Xp ? A_px(-1.0) : A_qy(1.0);
    // receiving quadratures
    if (type == GateType::Xp) {
      want(kY, kP) = Ga;
      want(kQ, kX) = -Gm;
    } else {
      want(kX, kQ) = Ga;
      want(kP, kY) = -Gm;
    }
    EXPECT_LT((linear_matrix(s) - want).norm(), 1e-14);
    EXPECT_LT((commutation_matrix(s) - canonical_commutation()).norm(), 1e-12);
  }
}

TEST(HybridChannel, LosslessFeedforwardCancelsReadout) {
  HybridChannelParams p;
  p.g_a = 0.6;
  p.g_m = 1.7;
  p.S = 4.0;
  p.K = p.g_a;
  auto h = begin_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  const VarIndex lr0 = h.readout_input;
  auto s = finish_hybrid_qnd(h, p.K);
  EXPECT_EQ(s.exprs[kY].coefficient(lr0), 0.0);
  EXPECT_NEAR(linear_matrix(s)(kQ, kX), -p.g_a * p.g_m, 1e-15);
  EXPECT_NEAR(linear_matrix(s)(kY, kP), p.g_a * p.g_m, 1e-15);
}

TEST(HybridChannel, ZeroLocalRateGivesNoCrossGain) {
  HybridChannelParams p;
  p.g_a = 0.0;
  p.g_m = 2.0;
  p.K = 0.3;
  auto s = apply_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  EXPECT_EQ(linear_matrix(s)(kQ, kX), 0.0);
  p.g_a = 2.0;
  p.g_m = 0.0;
  s = apply_hybrid_qnd(make_initial_state(), p, GateType::Yq);
  EXPECT_EQ(linear_matrix(s)(kP, kY), 0.0);
}

TEST(HybridChannel, AsymmetricSolve) {
  HybridChannelParams p;
  p.g_a = 0.9;
  p.g_m = 1.1;
  p.S = 5.0;
  auto h = begin_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  EXPECT_NEAR(gain_asymmetric_solve(h).K, p.g_a, 1e-15);

  p.eta = 0.81;
  h = begin_hybrid_qnd(make_initial_state(), p, GateType::Yq);
  auto sol = gain_asymmetric_solve(h);
  EXPECT_FALSE(sol.already_zero);
  EXPECT_NEAR(sol.K, p.g_a / 0.9, 1e-14);

  p.eta = 0.96;
  h = begin_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  const VarIndex lr0 = h.readout_input;
  auto s = finish_hybrid_qnd(h, gain_asymmetric_solve(h).K);
  EXPECT_LT(std::abs(s.exprs[kY].coefficient(lr0)), 1e-15);

  p.g_a = 0.0;
  p.K = 0.25;
  h = begin_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  sol = gain_asymmetric_solve(h);
  EXPECT_TRUE(sol.already_zero);
  EXPECT_EQ(sol.K, 0.25);
}

TEST(HybridChannel, DampingAndHeatingPreserveCommutators) {
  HybridChannelParams p;
  p.g_a = 0.7;
  p.g_m = 0.9;
  p.eta = 0.9;
  p.S = 2.0;
  p.K = 0.4;
  p.nu_m = 0.3;
  p.eta_damp = {0.95, 0.9, 0.99, 0.97};
  for (GateType type : {GateType::Xp, GateType::Yq}) {
    auto s = apply_hybrid_qnd(make_initial_state(), p, type);
    EXPECT_LT((commutation_matrix(s) - canonical_commutation()).norm(), 1e-12);
    EXPECT_NO_THROW(s.ensemble.validate());
  }
  p.eta_damp = {0.8, 0.8, 0.8, 0.8};
  auto s = apply_hybrid_qnd(make_initial_state(), p, GateType::Xp);
  // equal factors: vacuum admixture of variance 1 - eta^2
  for (const auto& [m, c] : s.exprs[kX].terms()) {
    if (s.ensemble.role(m[0]) == Role::Vacuum && s.ensemble.name(m[0]).rfind("damp", 0) == 0) {
      EXPECT_NEAR(c * c, 1 - 0.64, 1e-14);
    }
  }
}

std::vector<GateSetting> settings(std::size_t n, double eta, double S, double nu, double split = 1.0) {
  std::vector<GateSetting> v(n);
  for (auto& g : v) {
    g.eta = eta;
    g.S = S;
    g.nu_m = nu;
    g.split = split;
  }
  return v;
}

TEST(NoisyProtocol, NoiselessLimitReducesToUnitary) {
  for (RegimeKind kind : {RegimeKind::FullBroadcast, RegimeKind::Simplified, RegimeKind::SqueezingGeneration}) {
    RegimeSpec r{kind, 1.26, 1.2};
    auto u = run_unitary_protocol(r, 0.15, 3);
    for (GainMode mode : {GainMode::Symmetric, GainMode::Asymmetric}) {
      for (double split : {0.3, 1.0, 4.0}) {
        auto gs = settings(r.gate_count(), 1.0, 1.0, 0.0, split);
        auto s = run_noisy_protocol(r, 0.15, 3, gs, mode);
        auto proj = project_ancillas(s);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(max_abs_difference(proj[i], u.exprs[i]), 1e-12);
        EXPECT_LT((commutation_matrix(s) - canonical_commutation()).norm(), 1e-12);
      }
    }
  }
}

TEST(NoisyProtocol, GainModesCoincideWhenLossless) {
  RegimeSpec r{RegimeKind::FullBroadcast, 1.4};
  auto gs = settings(4, 1.0, 3.0, 1e-3, 0.7);
  auto a = run_noisy_protocol(r, 0.1, 3, gs, GainMode::Symmetric);
  auto b = run_noisy_protocol(r, 0.1, 3, gs, GainMode::Asymmetric);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(max_abs_difference(a.exprs[i], b.exprs[i]), 1e-13);
}

TEST(NoisyProtocol, BroadcastIdentitySurvivesAsymmetricGains) {
  RegimeSpec r{RegimeKind::FullBroadcast, 1.26};
  auto u = run_unitary_protocol(r, 0.15, 3);
  for (double t : {0.0, 0.4, 1.0}) {
    auto gs = settings(4, 0.8, 2.0, 0.0);
    for (auto& g : gs) g.asymmetry = t;
    auto s = run_noisy_protocol(r, 0.15, 3, gs, GainMode::Asymmetric);
    auto proj = project_ancillas(s);
    EXPECT_LT(max_abs_difference(proj[kX], u.exprs[kX]), 1e-12) << t;
    for (const auto& [m, c] : proj[kY].terms()) {
      EXPECT_EQ(m.power(s.initial[kQ]), 0u);
      EXPECT_EQ(m.power(s.initial[kP]), 0u);
    }
    EXPECT_LT((commutation_matrix(s) - canonical_commutation()).norm(), 1e-12);
  }
}

TEST(NoisyProtocol, HeatingRaisesOutputNoise) {
  RegimeSpec r{RegimeKind::FullBroadcast, 1.26};
  auto quiet = run_noisy_protocol(r, 0.15, 3, settings(4, 1.0, 10.0, 0.0), GainMode::Symmetric);
  auto hot = run_noisy_protocol(r, 0.15, 3, settings(4, 1.0, 10.0, 0.05), GainMode::Symmetric);
  EXPECT_GT(gaussian_variance(hot.exprs[kY], hot.ensemble), gaussian_variance(quiet.exprs[kY], quiet.ensemble));
}

TEST(NoisyProtocol, PreSqueezedSourceSuppressesItsContribution) {
  RegimeSpec r{RegimeKind::Simplified, 1.0};
  const double gamma = 0.1;
  auto gs = settings(2, 1.0, 1.0, 0.0);
  auto plain = run_noisy_protocol(r, gamma, 3, gs, GainMode::Symmetric);
  auto sq = run_noisy_protocol(r, gamma, 3, gs, GainMode::Symmetric, {}, GaussianModeState::squeezed(0.5));
  // q_i enters Y_f only through the nonlinear term; project everything else away
  auto only_q = [](const SymbolicState& s) {
    std::vector<VarIndex> drop;
    for (VarIndex v = 0; v < s.ensemble.size(); ++v)
      if (v != s.initial[kQ]) drop.push_back(v);
    return gaussian_variance(s.exprs[kY].without_variables(drop), s.ensemble);
  };
  const double ratio = only_q(sq) / only_q(plain);
  EXPECT_NEAR(ratio, std::exp(-4 * 0.5), 1e-12);  // Var(q^2) = 2 Var(q)^2
}

TEST(NoisyProtocol, FinalReadoutOnlyInSimplifiedRegime) {
  auto gs4 = settings(4, 1.0, 1.0, 0.0);
  EXPECT_THROW(run_noisy_protocol({RegimeKind::FullBroadcast, 1.0}, 0.1, 3, gs4, GainMode::Symmetric, {}, {}, true),
               ValidationError);
  EXPECT_THROW(run_noisy_protocol({RegimeKind::Simplified, 1.0}, 0.1, 3, gs4, GainMode::Symmetric), ValidationError);
  auto gs2 = settings(2, 1.0, 1.0, 0.0);
  RegimeSpec r{RegimeKind::Simplified, 1.3};
  auto s = run_noisy_protocol(r, 0.1, 3, gs2, GainMode::Symmetric, {}, {}, true);
  auto u = run_unitary_protocol(r, 0.1, 3);
  EXPECT_LT(max_abs_difference(project_ancillas(s)[kY], u.exprs[kY]), 1e-12);
}
