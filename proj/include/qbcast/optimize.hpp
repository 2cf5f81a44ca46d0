#pragma once

// Box-constrained Nelder-Mead (projection by clamping).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace qbcast {

struct NelderMeadOptions {
  std::size_t max_iterations = 400;
  double ftol = 1e-9;  // stop when f_worst - f_best <= ftol
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double initial_step = 0.1;  // fraction of the box width
  std::size_t restarts = 1;

  bool operator==(const NelderMeadOptions&) const = default;
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  std::size_t iterations = 0;
};

namespace detail {

inline void clamp_to_box(std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
}

}  // namespace detail

/// Minimizes f over the box [lo, hi] starting from x0, using at most
/// max_evals objective evaluations.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, const std::vector<double>& lo,
                             const std::vector<double>& hi, const NelderMeadOptions& opt = {},
                             std::size_t max_evals = 100000) {
  const std::size_t n = x0.size();
  NelderMeadResult best;
  detail::clamp_to_box(x0, lo, hi);
  auto eval = [&](const std::vector<double>& x) {
    ++best.evaluations;
    double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  best.x = x0;
  if (max_evals == 0) return best;
  best.f = eval(x0);
  if (n == 0) return best;

  std::vector<std::vector<double>> simplex(n + 1);
  std::vector<double> fv(n + 1);
  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), xr(n), xe(n), xc(n);

  auto point = [&](const std::vector<double>& base, const std::vector<double>& dir, double t,
                   std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = base[i] + t * (dir[i] - base[i]);
    detail::clamp_to_box(out, lo, hi);
  };

  for (std::size_t round = 0; round <= opt.restarts; ++round) {
    if (best.evaluations >= max_evals) break;
    simplex[0] = best.x;
    fv[0] = best.f;
    for (std::size_t i = 0; i < n; ++i) {
      simplex[i + 1] = best.x;
      const double w = hi[i] - lo[i];
      double step = opt.initial_step * (w > 0 ? w : 1.0);
      if (best.x[i] + step > hi[i]) step = -step;
      simplex[i + 1][i] += step;
      detail::clamp_to_box(simplex[i + 1], lo, hi);
      fv[i + 1] = best.evaluations < max_evals ? eval(simplex[i + 1]) : std::numeric_limits<double>::infinity();
    }

    for (std::size_t it = 0; it < opt.max_iterations && best.evaluations < max_evals; ++it) {
      ++best.iterations;
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
      const std::size_t ib = order[0], iw = order[n], isw = order[n - 1];
      if (fv[iw] - fv[ib] <= opt.ftol) break;

      std::fill(centroid.begin(), centroid.end(), 0.0);
      for (std::size_t k = 0; k <= n; ++k)
        if (k != iw)
          for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[k][i] / static_cast<double>(n);

      point(centroid, simplex[iw], -opt.reflection, xr);
      const double fr = eval(xr);
      if (fr < fv[ib]) {
        point(centroid, simplex[iw], -opt.reflection * opt.expansion, xe);
        const double fe = best.evaluations < max_evals ? eval(xe) : std::numeric_limits<double>::infinity();
        if (fe < fr) {
          simplex[iw] = xe;
          fv[iw] = fe;
        } else {
          simplex[iw] = xr;
          fv[iw] = fr;
        }
        continue;
      }
      if (fr < fv[isw]) {
        simplex[iw] = xr;
        fv[iw] = fr;
        continue;
      }
      // contraction: outside if the reflected point beats the worst
      const bool outside = fr < fv[iw];
      point(centroid, outside ? xr : simplex[iw], opt.contraction, xc);
      const double fc = best.evaluations < max_evals ? eval(xc) : std::numeric_limits<double>::infinity();
      if (fc < (outside ? fr : fv[iw])) {
        simplex[iw] = xc;
        fv[iw] = fc;
        continue;
      }
      for (std::size_t k = 0; k <= n; ++k) {
        if (k == ib) continue;
        point(simplex[ib], simplex[k], opt.shrink, simplex[k]);
        fv[k] = best.evaluations < max_evals ? eval(simplex[k]) : std::numeric_limits<double>::infinity();
      }
    }
    const std::size_t ib =
        static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    if (fv[ib] < best.f) {
      best.f = fv[ib];
      best.x = simplex[ib];
    }
  }
  return best;
}

}  // namespace qbcast
