#pragma once

// Nonlinear variance sigma(lambda) = Var(Y + lambda V'(X)) of the target, and
// its comparison against the non-classicality, quantum non-Gaussianity and
// squeezing thresholds.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "qbcast/errors.hpp"
#include "qbcast/gaussian_moments.hpp"
#include "qbcast/protocol.hpp"

namespace qbcast {

struct NlvParabola {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double operator()(double lambda) const { return (c2 * lambda + c1) * lambda + c0; }

  double lambda_min() const {
    if (c2 <= 0.0) throw NumericalError("parabola has no minimum (c2 <= 0)");
    return -c1 / (2.0 * c2);
  }
  double sigma_min() const {
    if (c2 <= 0.0) return c0;
    return c0 - c1 * c1 / (4.0 * c2);
  }
};

inline double threshold_nc(double lambda) { return 1.0 + 2.0 * lambda * lambda; }
inline double threshold_ng(double lambda) { return 3.0 * std::cbrt(lambda * lambda / 2.0); }
inline double threshold_sq(double lambda) { return 1.0 + lambda * lambda; }

/// Parabola through three distinct samples.
inline NlvParabola fit_parabola(std::span<const double, 3> lambda, std::span<const double, 3> sigma) {
  const double x0 = lambda[0], x1 = lambda[1], x2 = lambda[2];
  if (x0 == x1 || x1 == x2 || x0 == x2) throw ValidationError("fit needs three distinct lambda values");
  // Newton divided differences
  const double d01 = (sigma[1] - sigma[0]) / (x1 - x0);
  const double d12 = (sigma[2] - sigma[1]) / (x2 - x1);
  const double c2 = (d12 - d01) / (x2 - x0);
  const double c1 = d01 - c2 * (x0 + x1);
  const double c0 = sigma[0] - c1 * x0 - c2 * x0 * x0;
  return {c0, c1, c2};
}

/// sigma_f(lambda) = sigma_i(lambda - gamma): the effect of p <- p - gamma V'(q)
/// on the nonlinear variance of (q, p).
inline NlvParabola nlv_shift_check(const NlvParabola& p, double gamma) {
  return {p.c0 - p.c1 * gamma + p.c2 * gamma * gamma, p.c1 - 2.0 * p.c2 * gamma, p.c2};
}

/// Exact parabola of the pair (x, y) from the moment engine; V'(x) = x^(n-1).
inline NlvParabola compute_nlv(const QuadPoly& x, const QuadPoly& y, const GaussianEnsemble& e, int n) {
  if (n < 2) throw ValidationError("nonlinearity order must be >= 2", "nonlinearity.order");
  const std::size_t cap = std::max({x.degree_cap(), y.degree_cap(), degree_cap_for_order(n)});
  QuadPoly xc = QuadPoly::constant(0.0, cap);
  xc += x;
  const QuadPoly v = xc.pow(static_cast<std::size_t>(n - 1));
  const QuadPoly* ps[] = {&y, &v};
  const Eigen::MatrixXd C = gaussian_covariances(ps, e);
  NlvParabola out{std::max(0.0, C(0, 0)), 2.0 * C(0, 1), std::max(0.0, C(1, 1))};
  return out;
}

/// Parabola of the target mode (X, Y).
inline NlvParabola compute_nlv(const SymbolicState& s, int n) {
  return compute_nlv(s.exprs[kX], s.exprs[kY], s.ensemble, n);
}

/// Parabola of the source mode (q, p).
inline NlvParabola compute_source_nlv(const SymbolicState& s, int n) {
  return compute_nlv(s.exprs[kQ], s.exprs[kP], s.ensemble, n);
}

struct LambdaInterval {
  double lo = 0.0;
  double hi = 0.0;
};

struct Classification {
  bool nonclassical = false;
  bool non_gaussian = false;
  bool squeezed = false;
  std::vector<LambdaInterval> nc_intervals;
  std::vector<LambdaInterval> ng_intervals;
  std::vector<LambdaInterval> sq_intervals;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t points) {
  if (points == 0) return {};
  if (points == 1) return {lo};
  std::vector<double> v(points);
  for (std::size_t i = 0; i < points; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return v;
}

namespace detail {

inline constexpr double kBelowTol = 1e-12;

// Sub-threshold intervals of f(l) = sigma(l) - threshold(l) over the grid,
// with edges refined by bisection to 1e-6.
inline std::vector<LambdaInterval> below_intervals(const std::function<double(double)>& f,
                                                   std::span<const double> grid) {
  auto below = [&](double l) { return f(l) < -kBelowTol; };
  auto refine = [&](double a, double b) {
    // below(a) != below(b)
    const bool ba = below(a);
    while (std::abs(b - a) > 1e-6) {
      const double m = 0.5 * (a + b);
      if (below(m) == ba)
        a = m;
      else
        b = m;
    }
    return 0.5 * (a + b);
  };
  std::vector<LambdaInterval> out;
  bool inside = false;
  double start = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const bool b = below(grid[i]);
    if (b && !inside) {
      start = i == 0 ? grid[0] : refine(grid[i - 1], grid[i]);
      inside = true;
    } else if (!b && inside) {
      out.push_back({start, refine(grid[i - 1], grid[i])});
      inside = false;
    }
  }
  if (inside) out.push_back({start, grid.back()});
  return out;
}

}  // namespace detail

inline Classification classify(const NlvParabola& p, std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("lambda grid must be non-empty", "lambda_grid");
  Classification c;
  c.nc_intervals = detail::below_intervals([&](double l) { return p(l) - threshold_nc(l); }, grid);
  c.ng_intervals = detail::below_intervals([&](double l) { return p(l) - threshold_ng(l); }, grid);
  c.sq_intervals = detail::below_intervals([&](double l) { return p(l) - threshold_sq(l); }, grid);
  c.nonclassical = !c.nc_intervals.empty();
  c.non_gaussian = !c.ng_intervals.empty();
  c.squeezed = !c.sq_intervals.empty();
  return c;
}

}  // namespace qbcast
