#pragma once

// Brute-force references: Monte-Carlo sampling of the classical Gaussian law
// behind a GaussianEnsemble, and closed-form thermal relaxation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numbers>
#include <thread>
#include <vector>

#include "qbcast/errors.hpp"
#include "qbcast/gaussian_moments.hpp"

namespace qbcast {

struct McConfig {
  std::uint64_t samples = 1'000'000;
  std::uint64_t seed = 0x5eed;
  std::uint64_t batch = 1u << 16;
  unsigned workers = 1;

  void validate() const {
    if (samples < 1000) throw ValidationError("Monte-Carlo sample count must be >= 1000", "samples");
    if (batch == 0) throw ValidationError("batch must be positive", "batch");
  }
};

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Stateless counter-based generator: the k-th draw depends only on (seed, k).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t bits(std::uint64_t counter) const { return mix(mix(seed_) ^ mix(counter ^ 0xa0761d6478bd642fULL)); }

  /// Uniform on (0, 1).
  double uniform(std::uint64_t counter) const {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal pair from draws 2k and 2k+1 (Box-Muller).
  std::pair<double, double> normal_pair(std::uint64_t k) const {
    const double u1 = uniform(2 * k);
    const double u2 = uniform(2 * k + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

 private:
  std::uint64_t seed_;
};

/// Draws x = mu + L z with L L' = cov (eigen-factorization, negative
/// eigenvalues clamped to zero).
class GaussianSampler {
 public:
  GaussianSampler(const GaussianEnsemble& e, std::uint64_t seed) : rng_(seed) {
    const auto n = static_cast<Eigen::Index>(e.size());
    mu_ = Eigen::Map<const Eigen::VectorXd>(e.means().data(), n);
    if (n > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e.covariance_matrix());
      Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      L_ = es.eigenvectors() * s.asDiagonal();
    }
    half_ = (n + 1) / 2;
  }

  std::size_t dim() const { return static_cast<std::size_t>(mu_.size()); }

  void draw(std::uint64_t index, Eigen::VectorXd& z, Eigen::VectorXd& x) const {
    const auto n = mu_.size();
    z.resize(n);
    for (Eigen::Index k = 0; k < half_; ++k) {
      auto [a, b] = rng_.normal_pair(index * static_cast<std::uint64_t>(half_) + static_cast<std::uint64_t>(k));
      z(2 * k) = a;
      if (2 * k + 1 < n) z(2 * k + 1) = b;
    }
    x = mu_ + L_ * z;
  }

 private:
  CounterRng rng_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd L_;
  Eigen::Index half_ = 0;
};

namespace detail {

// Flattened polynomial for fast repeated evaluation.
struct FlatPoly {
  std::vector<double> coef;
  std::vector<std::uint32_t> start;
  std::vector<VarIndex> vars;

  explicit FlatPoly(const QuadPoly& p) {
    for (const auto& [m, c] : p.terms()) {
      coef.push_back(c);
      start.push_back(static_cast<std::uint32_t>(vars.size()));
      for (VarIndex v : m.vars()) vars.push_back(v);
    }
    start.push_back(static_cast<std::uint32_t>(vars.size()));
  }

  double operator()(const double* x) const {
    double s = 0.0;
    for (std::size_t t = 0; t < coef.size(); ++t) {
      double v = coef[t];
      for (std::uint32_t i = start[t]; i < start[t + 1]; ++i) v *= x[vars[i]];
      s += v;
    }
    return s;
  }
};

// Count, mean and central moment sums M2..M4; merged with the pairwise
// update formulas so the batch combination order is fixed.
struct Moments {
  double n = 0, mean = 0, m2 = 0, m3 = 0, m4 = 0;

  static Moments of(const std::vector<double>& v) {
    Moments r;
    r.n = static_cast<double>(v.size());
    if (v.empty()) return r;
    double s = 0;
    for (double x : v) s += x;
    r.mean = s / r.n;
    for (double x : v) {
      const double d = x - r.mean;
      const double d2 = d * d;
      r.m2 += d2;
      r.m3 += d2 * d;
      r.m4 += d2 * d2;
    }
    return r;
  }

  static Moments merge(const Moments& a, const Moments& b) {
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    Moments r;
    r.n = a.n + b.n;
    const double d = b.mean - a.mean;
    const double d2 = d * d;
    r.mean = a.mean + d * b.n / r.n;
    r.m2 = a.m2 + b.m2 + d2 * a.n * b.n / r.n;
    r.m3 = a.m3 + b.m3 + d2 * d * a.n * b.n * (a.n - b.n) / (r.n * r.n) +
           3.0 * d * (a.n * b.m2 - b.n * a.m2) / r.n;
    r.m4 = a.m4 + b.m4 +
           d2 * d2 * a.n * b.n * (a.n * a.n - a.n * b.n + b.n * b.n) / (r.n * r.n * r.n) +
           6.0 * d2 * (a.n * a.n * b.m2 + b.n * b.n * a.m2) / (r.n * r.n) +
           4.0 * d * (a.n * b.m3 - b.n * a.m3) / r.n;
    return r;
  }
};

inline Moments mc_moments(const QuadPoly& p, const GaussianEnsemble& e, const McConfig& cfg) {
  cfg.validate();
  detail::require_registered(p, e);
  const GaussianSampler sampler(e, cfg.seed);
  const FlatPoly fp(p);
  const std::uint64_t nb = (cfg.samples + cfg.batch - 1) / cfg.batch;
  std::vector<Moments> parts(nb);

  auto run_batch = [&](std::uint64_t b) {
    const std::uint64_t lo = b * cfg.batch;
    const std::uint64_t hi = std::min(cfg.samples, lo + cfg.batch);
    std::vector<double> vals;
    vals.reserve(hi - lo);
    Eigen::VectorXd z, x;
    for (std::uint64_t i = lo; i < hi; ++i) {
      sampler.draw(i, z, x);
      const double v = fp(x.data());
      if (!std::isfinite(v)) throw NumericalError("non-finite Monte-Carlo sample");
      vals.push_back(v);
    }
    parts[b] = Moments::of(vals);
  };

  const unsigned w = std::max(1u, std::min<unsigned>(cfg.workers, static_cast<unsigned>(nb)));
  if (w == 1) {
    for (std::uint64_t b = 0; b < nb; ++b) run_batch(b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(w);
    for (unsigned t = 0; t < w; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::uint64_t b = t; b < nb; b += w) run_batch(b);
        } catch (...) {
          errs[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& ep : errs)
      if (ep) std::rethrow_exception(ep);
  }

  // Pairwise tree over batches.
  while (parts.size() > 1) {
    std::vector<Moments> next;
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(Moments::merge(parts[i], parts[i + 1]));
    if (parts.size() % 2) next.push_back(parts.back());
    parts.swap(next);
  }
  return parts.front();
}

}  // namespace detail

/// Sample mean of p with its standard error.
inline McEstimate mc_expectation(const QuadPoly& p, const GaussianEnsemble& e, const McConfig& cfg = {}) {
  const auto m = detail::mc_moments(p, e, cfg);
  const double var = m.m2 / (m.n - 1.0);
  return {m.mean, std::sqrt(var / m.n)};
}

/// Sample variance of p; the standard error is the large-sample
/// sqrt((mu4 - mu2^2) / n).
inline McEstimate mc_variance(const QuadPoly& p, const GaussianEnsemble& e, const McConfig& cfg = {}) {
  const auto m = detail::mc_moments(p, e, cfg);
  const double mu2 = m.m2 / m.n;
  const double mu4 = m.m4 / m.n;
  return {m.m2 / (m.n - 1.0), std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / m.n)};
}

/// Mean occupation of a damped oscillator relaxing toward n_th.
inline double decay_reference(double n0, double zeta, double n_th, double T) {
  if (zeta < 0) throw ValidationError("decay rate must be non-negative", "zeta");
  if (std::isinf(T)) return zeta > 0 ? n_th : n0;
  return n_th + (n0 - n_th) * std::exp(-zeta * T);
}

}  // namespace qbcast
