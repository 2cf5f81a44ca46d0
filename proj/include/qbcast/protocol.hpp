#pragma once

// Heisenberg-picture composition of the broadcasting circuit: ideal QND gates,
// the local nonlinearity, and a noisy hybrid (atom - light - mechanics) QND
// channel built from elementary steps.
//
// Quadrature vector r = (X, Y, q, p): target (atoms) X, Y; source (mechanics) q, p.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "qbcast/errors.hpp"
#include "qbcast/gaussian_moments.hpp"

namespace qbcast {

enum Quadrature : std::size_t { kX = 0, kY = 1, kQ = 2, kP = 3 };

inline constexpr std::array<const char*, 4> kQuadratureNames = {"X", "Y", "q", "p"};

/// Gaussian single-mode input. Squeezing is along the first (position-like)
/// quadrature.
struct GaussianModeState {
  enum class Kind { Vacuum, Squeezed, Thermal, SqueezedThermal };
  Kind kind = Kind::Vacuum;
  double r = 0.0;    // squeezing parameter (Squeezed)
  double n = 0.0;    // mean thermal occupation (Thermal, SqueezedThermal)
  double S_m = 1.0;  // variance squeeze ratio (SqueezedThermal)

  static GaussianModeState vacuum() { return {}; }
  static GaussianModeState squeezed(double r) { return {Kind::Squeezed, r, 0.0, 1.0}; }
  static GaussianModeState thermal(double n) { return {Kind::Thermal, 0.0, n, 1.0}; }
  static GaussianModeState squeezed_thermal(double n, double S_m) {
    return {Kind::SqueezedThermal, 0.0, n, S_m};
  }

  bool operator==(const GaussianModeState&) const = default;

  void validate(const std::string& path = {}) const {
    if (!std::isfinite(r) || !std::isfinite(n) || !std::isfinite(S_m))
      throw ValidationError("mode parameters must be finite", path);
    if (n < 0) throw ValidationError("thermal occupation must be >= 0", path.empty() ? "n" : path + ".n");
    if (S_m <= 0) throw ValidationError("squeeze ratio must be > 0", path.empty() ? "S_m" : path + ".S_m");
  }

  /// (Var of position-like quadrature, Var of momentum-like quadrature).
  std::pair<double, double> variances() const {
    switch (kind) {
      case Kind::Vacuum: return {1.0, 1.0};
      case Kind::Squeezed: return {std::exp(-2 * r), std::exp(2 * r)};
      case Kind::Thermal: return {2 * n + 1, 2 * n + 1};
      case Kind::SqueezedThermal: return {(2 * n + 1) / S_m, (2 * n + 1) * S_m};
    }
    return {1.0, 1.0};
  }
};

struct SymbolicState {
  GaussianEnsemble ensemble;
  std::array<QuadPoly, 4> exprs{QuadPoly(), QuadPoly(), QuadPoly(), QuadPoly()};
  std::array<VarIndex, 4> initial{};

  const QuadPoly& operator[](std::size_t i) const { return exprs[i]; }
  std::size_t degree_cap() const { return exprs[0].degree_cap(); }

  bool is_initial(VarIndex v) const {
    return v == initial[0] || v == initial[1] || v == initial[2] || v == initial[3];
  }
};

inline std::size_t degree_cap_for_order(int n) {
  return std::max<std::size_t>(kDefaultDegreeCap, 2 * static_cast<std::size_t>(std::max(n - 1, 1)));
}

inline SymbolicState make_initial_state(const GaussianModeState& target = {},
                                        const GaussianModeState& source = {},
                                        std::size_t degree_cap = kDefaultDegreeCap) {
  target.validate("initial.target");
  source.validate("initial.source");
  SymbolicState s;
  auto [vx, vy] = target.variances();
  auto [vq, vp] = source.variances();
  auto [X, Y] = s.ensemble.add_conjugate_pair(Role::AtomX, "X_i", vx, Role::AtomY, "Y_i", vy, true);
  auto [q, p] = s.ensemble.add_conjugate_pair(Role::MechQ, "q_i", vq, Role::MechP, "p_i", vp, true);
  s.initial = {X, Y, q, p};
  for (std::size_t i = 0; i < 4; ++i) s.exprs[i] = QuadPoly::variable(s.initial[i], degree_cap);
  return s;
}

// ---------------------------------------------------------------- ideal gates

/// X <- X + g q, p <- p - g Y.
inline SymbolicState apply_qnd_qy(SymbolicState s, double g) {
  if (g == 0.0) return s;
  s.exprs[kX].add_scaled(s.exprs[kQ], g);
  s.exprs[kP].add_scaled(s.exprs[kY], -g);
  return s;
}

/// Y <- Y - g p, q <- q + g X.
inline SymbolicState apply_qnd_px(SymbolicState s, double g) {
  if (g == 0.0) return s;
  s.exprs[kY].add_scaled(s.exprs[kP], -g);
  s.exprs[kQ].add_scaled(s.exprs[kX], g);
  return s;
}

/// p <- p - gamma V'(q) with V(x) = x^n / n.
inline SymbolicState apply_nonlinearity(SymbolicState s, double gamma, int n) {
  if (n < 2) throw ValidationError("nonlinearity order must be >= 2", "nonlinearity.order");
  if (gamma == 0.0) return s;
  s.exprs[kP].add_scaled(s.exprs[kQ].pow(static_cast<std::size_t>(n - 1)), -gamma);
  return s;
}

/// Y <- Y + K p (homodyne readout of the source plus feedforward).
inline SymbolicState measurement_feedforward_final(SymbolicState s, double K) {
  s.exprs[kY].add_scaled(s.exprs[kP], K);
  return s;
}

// --------------------------------------------------------------- regimes

enum class RegimeKind { FullBroadcast, Simplified, SqueezingGeneration, Custom };

inline const char* to_string(RegimeKind k) {
  switch (k) {
    case RegimeKind::FullBroadcast: return "full-broadcast";
    case RegimeKind::Simplified: return "simplified";
    case RegimeKind::SqueezingGeneration: return "squeezing-generation";
    case RegimeKind::Custom: return "custom";
  }
  return "?";
}

struct RegimeSpec {
  RegimeKind kind = RegimeKind::FullBroadcast;
  double g = 1.0;
  double g1 = 1.0;
  std::array<double, 4> gains{};

  /// Gate gains g1..g4 in circuit order.
  std::array<double, 4> expand() const {
    auto inv = [](double x, const char* what) {
      if (x == 0.0 || !std::isfinite(x)) throw ValidationError("gain must be finite and nonzero", what);
      return 1.0 / x;
    };
    switch (kind) {
      case RegimeKind::FullBroadcast: return {-inv(g, "regime.g"), g, -g, inv(g, "regime.g")};
      case RegimeKind::Simplified: return {0.0, g, -g, 0.0};
      case RegimeKind::SqueezingGeneration:
        return {g1, g - inv(g1, "regime.g1"), -g, inv(g, "regime.g")};
      case RegimeKind::Custom: return gains;
    }
    return gains;
  }

  std::size_t gate_count() const { return kind == RegimeKind::Simplified ? 2 : 4; }

  bool operator==(const RegimeSpec&) const = default;
};

/// qy(g1), px(g2), nonlinearity, px(g3), qy(g4), in time order.
inline SymbolicState run_unitary_protocol(const RegimeSpec& regime, double gamma, int n,
                                          const GaussianModeState& target = {},
                                          const GaussianModeState& source = {}) {
  const auto g = regime.expand();
  for (double x : g)
    if (!std::isfinite(x)) throw ValidationError("gate gains must be finite", "regime");
  SymbolicState s = make_initial_state(target, source, degree_cap_for_order(n));
  s = apply_qnd_qy(std::move(s), g[0]);
  s = apply_qnd_px(std::move(s), g[1]);
  s = apply_nonlinearity(std::move(s), gamma, n);
  s = apply_qnd_px(std::move(s), g[2]);
  s = apply_qnd_qy(std::move(s), g[3]);
  return s;
}

// ------------------------------------------------------- hybrid QND channel

enum class GateType { Xp, Yq };

struct HybridChannelParams {
  double g_a = 0.0;
  double g_m = 0.0;
  double eta = 1.0;
  double S = 1.0;
  double K = 0.0;
  double nu_m = 0.0;
  std::array<double, 4> eta_damp{1.0, 1.0, 1.0, 1.0};

  void validate(const std::string& path = "channel") const {
    auto finite = [&](double x, const char* name) {
      if (!std::isfinite(x)) throw ValidationError("must be finite", path + "." + name);
    };
    finite(g_a, "g_a");
    finite(g_m, "g_m");
    finite(K, "K");
    if (!(eta > 0.0 && eta <= 1.0)) throw ValidationError("must lie in (0, 1]", path + ".eta");
    if (!(S >= 1.0) || !std::isfinite(S)) throw ValidationError("must be >= 1", path + ".S");
    if (!(nu_m >= 0.0) || !std::isfinite(nu_m)) throw ValidationError("must be >= 0", path + ".nu_m");
    for (std::size_t i = 0; i < 4; ++i)
      if (!(eta_damp[i] > 0.0 && eta_damp[i] <= 1.0))
        throw ValidationError("must lie in (0, 1]", path + ".eta_damp[" + std::to_string(i) + "]");
    for (std::size_t pair : {0u, 2u}) {
      const bool a = eta_damp[pair] == 1.0, b = eta_damp[pair + 1] == 1.0;
      if (a != b)
        throw ValidationError("a damped pair cannot keep one quadrature undamped",
                              path + ".eta_damp[" + std::to_string(pair) + "]");
    }
  }
};

/// Channel state after the atom-light interaction, loss and light-mechanics
/// interaction, with the homodyne feedforward still pending.
struct HybridProgress {
  SymbolicState state;
  HybridChannelParams params;
  GateType type = GateType::Xp;
  double sign = 1.0;
  std::size_t A = kX, B = kY, C = kP, R = kQ;
  VarIndex readout_input = 0;
  QuadPoly readout;
};

namespace detail {

// vacuum-admixture damping of one conjugate pair, [x, y] = 2i preserved
inline void damp_pair(SymbolicState& s, std::size_t ix, std::size_t iy, double ex, double ey,
                      const std::string& tag) {
  if (ex == 1.0 && ey == 1.0) return;
  const double ab = 1.0 - ex * ey;
  const double ratio = std::sqrt((1.0 - ex * ex) / (1.0 - ey * ey));
  const double a = std::sqrt(ab * ratio);
  const double b = std::sqrt(ab / ratio);
  auto [vx, vy] = s.ensemble.add_conjugate_pair(Role::Vacuum, tag + "_x", 1.0, Role::Vacuum, tag + "_y", 1.0, true);
  s.exprs[ix] *= ex;
  s.exprs[ix].add_term(Monomial(vx), a);
  s.exprs[iy] *= ey;
  s.exprs[iy].add_term(Monomial(vy), b);
}

}  // namespace detail

/// Steps 1-3 of the channel: atom-light QND, mediator loss, light-mechanics QND.
inline HybridProgress begin_hybrid_qnd(SymbolicState s, const HybridChannelParams& params, GateType type) {
  params.validate();
  HybridProgress h;
  h.params = params;
  h.type = type;
  if (type == GateType::Xp) {
    h.sign = 1.0;
    h.A = kX, h.B = kY, h.C = kP, h.R = kQ;
  } else {
    h.sign = -1.0;
    h.A = kY, h.B = kX, h.C = kQ, h.R = kP;
  }
  const std::size_t cap = s.degree_cap();
  const double sg = h.sign;
  const int id = static_cast<int>(s.ensemble.size());
  const std::string tag = std::to_string(id);

  // Readout quadrature carries the large variance S; ordering keeps
  // [readout, conjugate] equal to [A, B].
  VarIndex lr0, lc0;
  if (type == GateType::Xp) {
    std::tie(lr0, lc0) = s.ensemble.add_conjugate_pair(Role::MediatorX, "L_r" + tag, params.S, Role::MediatorY,
                                                       "L_c" + tag, 1.0 / params.S, true);
  } else {
    std::tie(lc0, lr0) = s.ensemble.add_conjugate_pair(Role::MediatorY, "L_c" + tag, 1.0 / params.S,
                                                       Role::MediatorX, "L_r" + tag, params.S, true);
  }
  QuadPoly Lr = QuadPoly::variable(lr0, cap);
  QuadPoly Lc = QuadPoly::variable(lc0, cap);

  // (1) atom-light
  s.exprs[h.B].add_scaled(Lr, -sg * params.g_a);
  Lc.add_scaled(s.exprs[h.A], -sg * params.g_a);

  // (2) loss
  if (params.eta < 1.0) {
    const double t = std::sqrt(params.eta), u = std::sqrt(1.0 - params.eta);
    VarIndex vr, vc;
    if (type == GateType::Xp) {
      std::tie(vr, vc) = s.ensemble.add_conjugate_pair(Role::Vacuum, "loss_r" + tag, 1.0, Role::Vacuum,
                                                       "loss_c" + tag, 1.0, true);
    } else {
      std::tie(vc, vr) = s.ensemble.add_conjugate_pair(Role::Vacuum, "loss_c" + tag, 1.0, Role::Vacuum,
                                                       "loss_r" + tag, 1.0, true);
    }
    Lr *= t;
    Lr.add_term(Monomial(vr), u);
    Lc *= t;
    Lc.add_term(Monomial(vc), u);
  }

  // (3) light-mechanics
  s.exprs[h.R].add_scaled(Lc, sg * params.g_m);
  Lr.add_scaled(s.exprs[h.C], sg * params.g_m);

  h.readout_input = lr0;
  h.readout = std::move(Lr);
  h.state = std::move(s);
  return h;
}

/// Steps 4-6: feedforward of the homodyne record with gain K, mechanical
/// heating, damping.
inline SymbolicState finish_hybrid_qnd(HybridProgress h, double K) {
  SymbolicState s = std::move(h.state);
  const auto& params = h.params;
  const std::string tag = std::to_string(s.ensemble.size());

  // (4)
  s.exprs[h.B].add_scaled(h.readout, h.sign * K);

  // (5)
  if (params.nu_m > 0.0) {
    VarIndex hq = s.ensemble.add_variable(Role::Thermal, "heat_q" + tag, params.nu_m);
    VarIndex hp = s.ensemble.add_variable(Role::Thermal, "heat_p" + tag, params.nu_m);
    s.exprs[kQ].add_term(Monomial(hq), 1.0);
    s.exprs[kP].add_term(Monomial(hp), 1.0);
  }

  // (6)
  detail::damp_pair(s, kX, kY, params.eta_damp[0], params.eta_damp[1], "damp_a" + tag);
  detail::damp_pair(s, kQ, kP, params.eta_damp[2], params.eta_damp[3], "damp_m" + tag);
  return s;
}

struct FeedforwardSolution {
  double K = 0.0;
  bool already_zero = false;
};

/// Feedforward gain that removes the initial mediator readout variable from
/// the atomic receiving quadrature.
inline FeedforwardSolution gain_asymmetric_solve(const HybridProgress& h) {
  const Monomial m(h.readout_input);
  const double c0 = h.state.exprs[h.B].coefficient(m);
  const double c1 = h.sign * h.readout.coefficient(m);
  if (c0 == 0.0) return {h.params.K, true};
  if (c1 == 0.0) throw NumericalError("mediator coefficient does not depend on the feedforward gain");
  return {-c0 / c1, false};
}

inline SymbolicState apply_hybrid_qnd(SymbolicState s, const HybridChannelParams& params, GateType type) {
  return finish_hybrid_qnd(begin_hybrid_qnd(std::move(s), params, type), params.K);
}

// ------------------------------------------------------- noisy protocol

enum class GainMode { Symmetric, Asymmetric };

inline const char* to_string(GainMode m) { return m == GainMode::Symmetric ? "symmetric" : "asymmetric"; }

/// Per-gate noise and operating point.
///   split      g_a / g_m ratio (> 0)
///   asymmetry  in asymmetric mode, log-ratio log(G_a/G_m)/log(1/eta) in [0,1];
///              1 is full cancellation of the mediator readout noise
struct GateSetting {
  double eta = 1.0;
  double S = 1.0;
  double nu_m = 0.0;
  std::array<double, 4> eta_damp{1.0, 1.0, 1.0, 1.0};
  double split = 1.0;
  double asymmetry = 1.0;
};

/// Hybrid-channel parameters realizing an ideal-gate gain G in the given mode.
/// Returns the parameters with K filled in for symmetric mode; asymmetric mode
/// solves for K after the first channel steps.
inline HybridChannelParams hybrid_params_for_gain(double G, const GateSetting& gs, GainMode mode) {
  if (!(gs.split > 0.0) || !std::isfinite(gs.split)) throw ValidationError("split must be > 0", "channel.split");
  if (!(gs.asymmetry >= 0.0 && gs.asymmetry <= 1.0))
    throw ValidationError("asymmetry must lie in [0, 1]", "channel.asymmetry");
  HybridChannelParams p;
  p.eta = gs.eta;
  p.S = gs.S;
  p.nu_m = gs.nu_m;
  p.eta_damp = gs.eta_damp;
  const double sqe = std::sqrt(gs.eta);
  // |g_a g_m| = |G| * eta^{-e/2}: e = 1 symmetric, e = 1 - asymmetry asymmetric
  const double e = mode == GainMode::Symmetric ? 1.0 : 1.0 - gs.asymmetry;
  const double prod = std::abs(G) * std::pow(gs.eta, -0.5 * e);
  p.g_m = std::sqrt(prod / gs.split);
  p.g_a = (G < 0 ? -1.0 : 1.0) * gs.split * p.g_m;
  p.K = p.g_a * sqe;
  return p;
}

inline SymbolicState apply_hybrid_gate(SymbolicState s, double G, GateType type, const GateSetting& gs,
                                       GainMode mode) {
  HybridChannelParams p = hybrid_params_for_gain(G, gs, mode);
  if (G == 0.0) return finish_hybrid_qnd(begin_hybrid_qnd(std::move(s), p, type), 0.0);
  HybridProgress h = begin_hybrid_qnd(std::move(s), p, type);
  double K = p.K;
  if (mode == GainMode::Asymmetric) {
    const auto sol = gain_asymmetric_solve(h);
    K = sol.K * std::pow(gs.eta, 1.0 - gs.asymmetry);
  }
  return finish_hybrid_qnd(std::move(h), K);
}

/// Circuit of noisy hybrid gates around the ideal nonlinearity. Gate types:
/// qy gates are Yq channels with gain g, px gates are Xp channels with gain -g.
/// `gates` has 4 entries (2 for the simplified regime). With final_readout the
/// last px gate of the simplified regime is replaced by Y <- Y - g3 p.
inline SymbolicState run_noisy_protocol(const RegimeSpec& regime, double gamma, int n,
                                        std::span<const GateSetting> gates, GainMode mode,
                                        const GaussianModeState& target = {},
                                        const GaussianModeState& source = {}, bool final_readout = false) {
  const auto g = regime.expand();
  const bool simplified = regime.kind == RegimeKind::Simplified;
  if (gates.size() != regime.gate_count())
    throw ValidationError("expected " + std::to_string(regime.gate_count()) + " gate settings, got " +
                              std::to_string(gates.size()),
                          "channel");
  if (final_readout && !simplified)
    throw ValidationError("final readout replaces the last px gate of the simplified regime", "final_readout");
  SymbolicState s = make_initial_state(target, source, degree_cap_for_order(n));
  if (simplified) {
    s = apply_hybrid_gate(std::move(s), -g[1], GateType::Xp, gates[0], mode);
    s = apply_nonlinearity(std::move(s), gamma, n);
    if (final_readout)
      s = measurement_feedforward_final(std::move(s), -g[2]);
    else
      s = apply_hybrid_gate(std::move(s), -g[2], GateType::Xp, gates[1], mode);
    return s;
  }
  s = apply_hybrid_gate(std::move(s), g[0], GateType::Yq, gates[0], mode);
  s = apply_hybrid_gate(std::move(s), -g[1], GateType::Xp, gates[1], mode);
  s = apply_nonlinearity(std::move(s), gamma, n);
  s = apply_hybrid_gate(std::move(s), -g[2], GateType::Xp, gates[2], mode);
  s = apply_hybrid_gate(std::move(s), g[3], GateType::Yq, gates[3], mode);
  return s;
}

// ------------------------------------------------------- structural checks

/// Coefficients of the four output quadratures on the four initial variables.
inline Eigen::Matrix4d linear_matrix(const SymbolicState& s) {
  Eigen::Matrix4d M;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) M(i, j) = s.exprs[i].coefficient(s.initial[j]);
  return M;
}

/// [r_i, r_j] / 2i of the linear parts of the outputs, over every registered pair.
inline Eigen::Matrix4d commutation_matrix(const SymbolicState& s) {
  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  for (const auto& pr : s.ensemble.pairs()) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        const double a = s.exprs[i].coefficient(pr.x) * s.exprs[j].coefficient(pr.y);
        const double b = s.exprs[i].coefficient(pr.y) * s.exprs[j].coefficient(pr.x);
        C(i, j) += pr.commutator * (a - b);
      }
    }
  }
  return C;
}

inline Eigen::Matrix4d canonical_commutation() {
  Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
  J(0, 1) = 1;
  J(1, 0) = -1;
  J(2, 3) = 1;
  J(3, 2) = -1;
  return J;
}

/// Outputs with every injected (non-initial) variable set to zero.
inline std::array<QuadPoly, 4> project_ancillas(const SymbolicState& s) {
  std::vector<VarIndex> drop;
  for (VarIndex v = 0; v < s.ensemble.size(); ++v)
    if (!s.is_initial(v)) drop.push_back(v);
  std::array<QuadPoly, 4> out{QuadPoly(), QuadPoly(), QuadPoly(), QuadPoly()};
  for (std::size_t i = 0; i < 4; ++i) out[i] = s.exprs[i].without_variables(drop);
  return out;
}

}  // namespace qbcast
