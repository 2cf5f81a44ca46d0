#pragma once

// Envelope of the nonlinear variance: for each lambda, the minimum of
// sigma(lambda) over the protocol's control parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qbcast/errors.hpp"
#include "qbcast/nlv.hpp"
#include "qbcast/optimize.hpp"
#include "qbcast/protocol.hpp"

namespace qbcast {

using Interval = std::pair<double, double>;

struct EnvelopeBounds {
  Interval g{0.1, 10.0};
  Interval g1{0.1, 10.0};
  Interval gain{-10.0, 10.0};  // custom regime, each gate
  Interval S_db{0.0, 20.0};
  Interval split_log10{-1.0, 1.0};
  Interval asymmetry{0.0, 1.0};
  std::optional<Interval> tau;  // tau is optimized only when bounds are given

  bool operator==(const EnvelopeBounds&) const = default;
};

/// Fixed system properties of the optimized protocol.
struct EnvelopeSystem {
  RegimeKind kind = RegimeKind::FullBroadcast;
  double gamma = 0.07;
  int order = 3;
  GainMode mode = GainMode::Asymmetric;
  double eta = 1.0;
  double Gamma_m = 0.0;
  double tau = 1.0;
  std::array<double, 4> eta_damp{1.0, 1.0, 1.0, 1.0};
  GaussianModeState target;
  GaussianModeState source;
};

struct EnvelopeOptions {
  std::size_t coarse_points = 7;
  std::size_t coarse_cap = 4096;
  std::size_t starts = 3;
  std::size_t budget = 1500;  // objective evaluations per Nelder-Mead run
  std::size_t sweeps = 2;     // neighbour warm-start passes
  std::uint64_t seed = 1;
  unsigned workers = 1;
  NelderMeadOptions nm;
};

/// Control vector layout for one system.
struct ControlLayout {
  std::vector<std::string> names;
  std::vector<double> lo, hi;
  RegimeKind kind = RegimeKind::FullBroadcast;
  std::size_t gates = 4;
  bool has_asymmetry = false;
  bool has_tau = false;

  std::size_t size() const { return names.size(); }

  std::size_t index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("unknown control '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  }
  bool contains(const std::string& name) const { return std::find(names.begin(), names.end(), name) != names.end(); }
};

struct DecodedControls {
  RegimeSpec regime;
  std::vector<GateSetting> gates;
  double S_db = 0.0;
  double tau = 1.0;
};

namespace detail {

inline void check_interval(const Interval& iv, const std::string& path) {
  if (!std::isfinite(iv.first) || !std::isfinite(iv.second))
    throw ValidationError("bounds must be finite", path);
  if (iv.first > iv.second) throw ValidationError("empty feasible set: lower bound above upper bound", path);
}

// gains that are inverted must keep |g| >= 0.1
inline void check_invertible(const Interval& iv, const std::string& path) {
  check_interval(iv, path);
  if (!(iv.first >= 0.1 || iv.second <= -0.1))
    throw ValidationError("empty feasible set: bounds must exclude |g| < 0.1 where 1/g is used", path);
}

}  // namespace detail

inline ControlLayout make_layout(const EnvelopeSystem& sys, const EnvelopeBounds& b) {
  ControlLayout L;
  L.kind = sys.kind;
  L.gates = sys.kind == RegimeKind::Simplified ? 2 : 4;
  auto add = [&](std::string name, const Interval& iv) {
    detail::check_interval(iv, "analysis.bounds." + name);
    L.names.push_back(std::move(name));
    L.lo.push_back(iv.first);
    L.hi.push_back(iv.second);
  };
  switch (sys.kind) {
    case RegimeKind::FullBroadcast:
      detail::check_invertible(b.g, "analysis.bounds.g");
      add("g", b.g);
      break;
    case RegimeKind::Simplified:
      detail::check_interval(b.g, "analysis.bounds.g");
      add("g", b.g);
      break;
    case RegimeKind::SqueezingGeneration:
      detail::check_invertible(b.g, "analysis.bounds.g");
      detail::check_invertible(b.g1, "analysis.bounds.g1");
      add("g", b.g);
      add("g1", b.g1);
      break;
    case RegimeKind::Custom:
      for (int i = 1; i <= 4; ++i) add("gain" + std::to_string(i), b.gain);
      break;
  }
  add("S_db", b.S_db);
  for (std::size_t i = 1; i <= L.gates; ++i) add("split_log10_" + std::to_string(i), b.split_log10);
  L.has_asymmetry = sys.mode == GainMode::Asymmetric && sys.eta < 1.0;
  // one shared value: gates with unequal asymmetries no longer compose to the
  // regime's target map
  if (L.has_asymmetry) add("asymmetry", b.asymmetry);
  if (b.tau) {
    if (b.tau->first < 0) throw ValidationError("tau must be >= 0", "analysis.bounds.tau");
    add("tau", *b.tau);
    L.has_tau = true;
  }
  return L;
}

inline DecodedControls decode_controls(const ControlLayout& L, const EnvelopeSystem& sys, std::span<const double> x) {
  DecodedControls d;
  std::size_t k = 0;
  d.regime.kind = sys.kind;
  switch (sys.kind) {
    case RegimeKind::FullBroadcast:
    case RegimeKind::Simplified: d.regime.g = x[k++]; break;
    case RegimeKind::SqueezingGeneration:
      d.regime.g = x[k++];
      d.regime.g1 = x[k++];
      break;
    case RegimeKind::Custom:
      for (std::size_t i = 0; i < 4; ++i) d.regime.gains[i] = x[k++];
      break;
  }
  d.S_db = x[k++];
  const double S = std::pow(10.0, d.S_db / 10.0);
  d.tau = sys.tau;
  d.gates.resize(L.gates);
  for (std::size_t i = 0; i < L.gates; ++i) d.gates[i].split = std::pow(10.0, x[k++]);
  const double t = L.has_asymmetry ? x[k++] : (sys.mode == GainMode::Asymmetric ? 1.0 : 0.0);
  for (auto& g : d.gates) g.asymmetry = t;
  if (L.has_tau) d.tau = x[k++];
  for (auto& g : d.gates) {
    g.eta = sys.eta;
    g.S = S;
    g.nu_m = 2.0 * sys.Gamma_m * d.tau;
    g.eta_damp = sys.eta_damp;
  }
  return d;
}

/// Parabola for one control vector; +inf coefficients signal an infeasible point.
inline NlvParabola evaluate_controls(const ControlLayout& L, const EnvelopeSystem& sys, std::span<const double> x,
                                     std::optional<GainMode> mode_override = std::nullopt) {
  try {
    const DecodedControls d = decode_controls(L, sys, x);
    const GainMode mode = mode_override.value_or(sys.mode);
    const SymbolicState s = run_noisy_protocol(d.regime, sys.gamma, sys.order, d.gates, mode, sys.target, sys.source);
    return compute_nlv(s, sys.order);
  } catch (const ValidationError&) {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, 0.0, inf};
  }
}

struct EnvelopePoint {
  double lambda = 0.0;
  double sigma_env = std::numeric_limits<double>::infinity();
  std::vector<double> argmin;
  bool flag_nc = false;
  bool flag_ng = false;
};

struct EnvelopeResult {
  ControlLayout layout;
  std::vector<EnvelopePoint> points;
  std::size_t coarse_size = 0;
  std::size_t evaluations = 0;
};

/// Called for every evaluated control vector (serialized by a mutex).
using EnvelopeObserver = std::function<void(std::span<const double>, const NlvParabola&)>;

namespace detail {

inline double norm2(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return s;
}

// strictly better, or equal value with a smaller control vector
inline bool improves(double f, const std::vector<double>& x, const EnvelopePoint& cur) {
  if (f < cur.sigma_env) return true;
  return f == cur.sigma_env && !cur.argmin.empty() && norm2(x) < norm2(cur.argmin);
}

template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  const unsigned w = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(w);
  for (unsigned t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::vector<double>> coarse_grid(const ControlLayout& L, const EnvelopeOptions& opt) {
  const std::size_t d = L.size();
  const std::size_t m = std::max<std::size_t>(opt.coarse_points, 1);
  auto axis_value = [&](std::size_t dim, std::size_t i) {
    if (m == 1 || L.lo[dim] == L.hi[dim]) return 0.5 * (L.lo[dim] + L.hi[dim]);
    return L.lo[dim] + (L.hi[dim] - L.lo[dim]) * static_cast<double>(i) / static_cast<double>(m - 1);
  };
  double total = std::pow(static_cast<double>(m), static_cast<double>(d));
  std::vector<std::vector<double>> pts;
  if (total <= static_cast<double>(opt.coarse_cap)) {
    const auto n = static_cast<std::size_t>(total);
    for (std::size_t idx = 0; idx < n; ++idx) {
      std::vector<double> x(d);
      std::size_t r = idx;
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = axis_value(k, r % m);
        r /= m;
      }
      pts.push_back(std::move(x));
    }
    return pts;
  }
  // seeded subsample of the full product grid
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  for (std::size_t s = 0; s < opt.coarse_cap; ++s) {
    std::vector<double> x(d);
    for (std::size_t k = 0; k < d; ++k) x[k] = axis_value(k, pick(rng));
    pts.push_back(std::move(x));
  }
  return pts;
}

}  // namespace detail

/// Per-lambda minimum of sigma over the controls: shared coarse grid, Nelder-Mead
/// from the best coarse points, then warm starts from neighbouring argmins.
/// `extra_starts[i]`, when given, adds starting points for lambda_i.
inline EnvelopeResult optimize_envelope(const EnvelopeSystem& sys, std::span<const double> lambda_grid,
                                        const EnvelopeBounds& bounds, const EnvelopeOptions& opt,
                                        std::span<const std::vector<std::vector<double>>> extra_starts = {},
                                        const EnvelopeObserver& observer = nullptr,
                                        std::optional<GainMode> mode_override = std::nullopt) {
  if (lambda_grid.empty()) throw ValidationError("lambda grid must be non-empty", "analysis.lambda_grid");
  EnvelopeResult res;
  res.layout = make_layout(sys, bounds);
  const ControlLayout& L = res.layout;
  std::mutex mu;
  std::size_t evals = 0;

  auto objective = [&](std::span<const double> x) {
    NlvParabola p = evaluate_controls(L, sys, x, mode_override);
    std::lock_guard lock(mu);
    ++evals;
    if (observer) observer(x, p);
    return p;
  };

  const auto coarse = detail::coarse_grid(L, opt);
  res.coarse_size = coarse.size();
  std::vector<NlvParabola> coarse_p(coarse.size());
  detail::parallel_for(coarse.size(), opt.workers, [&](std::size_t i) { coarse_p[i] = objective(coarse[i]); });

  const std::size_t nl = lambda_grid.size();
  std::vector<EnvelopePoint> pts(nl);

  auto refine = [&](EnvelopePoint& pt, const std::vector<double>& start) {
    if (opt.budget == 0) return;
    const double lam = pt.lambda;
    auto f = [&](const std::vector<double>& x) { return objective(x)(lam); };
    auto r = nelder_mead(f, start, L.lo, L.hi, opt.nm, opt.budget);
    if (std::isfinite(r.f) && detail::improves(r.f, r.x, pt)) {
      pt.sigma_env = r.f;
      pt.argmin = r.x;
    }
  };

  // pass 1: coarse ranking and multistart refinement
  detail::parallel_for(nl, opt.workers, [&](std::size_t i) {
    EnvelopePoint& pt = pts[i];
    pt.lambda = lambda_grid[i];
    std::vector<std::size_t> idx(coarse.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> val(coarse.size());
    for (std::size_t k = 0; k < coarse.size(); ++k) {
      val[k] = coarse_p[k](pt.lambda);
      if (!std::isfinite(val[k])) val[k] = std::numeric_limits<double>::infinity();
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (val[a] != val[b]) return val[a] < val[b];
      return detail::norm2(coarse[a]) < detail::norm2(coarse[b]);
    });
    for (std::size_t k : idx) {
      if (detail::improves(val[k], coarse[k], pt)) {
        pt.sigma_env = val[k];
        pt.argmin = coarse[k];
      }
    }
    const std::size_t m = std::min(opt.starts, idx.size());
    for (std::size_t s = 0; s < m; ++s)
      if (std::isfinite(val[idx[s]])) refine(pt, coarse[idx[s]]);
    if (i < extra_starts.size())
      for (const auto& x : extra_starts[i]) {
        if (x.size() != L.size()) throw ValidationError("extra start has wrong dimension");
        const double v = objective(x)(pt.lambda);
        if (std::isfinite(v) && detail::improves(v, x, pt)) {
          pt.sigma_env = v;
          pt.argmin = x;
        }
        refine(pt, x);
      }
  });

  // later passes: warm starts from the previous pass's neighbours
  for (std::size_t sweep = 0; sweep < opt.sweeps && opt.budget > 0 && nl > 1; ++sweep) {
    const std::vector<EnvelopePoint> prev = pts;
    detail::parallel_for(nl, opt.workers, [&](std::size_t i) {
      for (std::size_t j : {i - 1, i + 1}) {
        if (j >= nl || prev[j].argmin.empty()) continue;
        const double v = objective(prev[j].argmin)(pts[i].lambda);
        if (std::isfinite(v) && detail::improves(v, prev[j].argmin, pts[i])) {
          pts[i].sigma_env = v;
          pts[i].argmin = prev[j].argmin;
        }
        refine(pts[i], prev[j].argmin);
      }
    });
  }

  for (auto& pt : pts) {
    pt.flag_nc = pt.sigma_env < threshold_nc(pt.lambda) - 1e-12;
    pt.flag_ng = pt.sigma_env < threshold_ng(pt.lambda) - 1e-12;
  }
  res.points = std::move(pts);
  res.evaluations = evals;
  return res;
}

/// Maps a control vector between layouts by name; controls absent from the
/// source take `fill` (asymmetry 0 embeds a symmetric operating point).
inline std::vector<double> embed_controls(const ControlLayout& from, std::span<const double> x, const ControlLayout& to,
                                          double fill = 0.0) {
  std::vector<double> out(to.size(), fill);
  for (std::size_t i = 0; i < to.size(); ++i)
    if (from.contains(to.names[i])) out[i] = x[from.index(to.names[i])];
  return out;
}

/// Envelope for the configured gain mode. In asymmetric mode with loss, the
/// symmetric operating points form the asymmetry = 0 face of the control box;
/// that face is optimized first and its argmins seed the full search.
inline EnvelopeResult compute_envelope(const EnvelopeSystem& sys, std::span<const double> lambda_grid,
                                       const EnvelopeBounds& bounds, const EnvelopeOptions& opt,
                                       std::span<const std::vector<std::vector<double>>> extra_starts = {},
                                       const EnvelopeObserver& observer = nullptr) {
  const ControlLayout full = make_layout(sys, bounds);
  if (!full.has_asymmetry) return optimize_envelope(sys, lambda_grid, bounds, opt, extra_starts, observer);

  EnvelopeSystem face = sys;
  face.mode = GainMode::Symmetric;
  const EnvelopeResult sym = optimize_envelope(face, lambda_grid, bounds, opt, {}, observer);
  std::vector<std::vector<std::vector<double>>> starts(lambda_grid.size());
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (i < extra_starts.size()) starts[i] = extra_starts[i];
    if (!sym.points[i].argmin.empty()) starts[i].push_back(embed_controls(sym.layout, sym.points[i].argmin, full, 0.0));
  }
  EnvelopeResult res = optimize_envelope(sys, lambda_grid, bounds, opt, starts, observer);
  res.evaluations += sym.evaluations;
  return res;
}

/// Gate gains g1..g4 realized by a control vector.
inline std::array<double, 4> realized_gains(const ControlLayout& L, const EnvelopeSystem& sys, std::span<const double> x) {
  return decode_controls(L, sys, x).regime.expand();
}

}  // namespace qbcast
