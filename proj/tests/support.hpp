#pragma once

#include <random>
#include <vector>

#include "qbcast/gaussian_moments.hpp"

namespace qbcast::testkit {

// Random zero- or nonzero-mean ensemble with a well-conditioned covariance.
inline GaussianEnsemble random_ensemble(std::size_t n, std::mt19937_64& rng, bool with_means = false) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd B(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) B(i, j) = nd(rng);
  Eigen::MatrixXd S = B * B.transpose() / static_cast<double>(n) + 0.3 * Eigen::MatrixXd::Identity(n, n);
  GaussianEnsemble e;
  for (std::size_t i = 0; i < n; ++i)
    e.add_variable(Role::Vacuum, "z" + std::to_string(i), S(i, i), with_means ? 0.5 * nd(rng) : 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.set_covariance(i, j, S(i, j));
  return e;
}

inline QuadPoly random_poly(std::size_t nvars, std::size_t max_degree, std::size_t terms, std::mt19937_64& rng,
                            std::size_t cap = kDefaultDegreeCap) {
  std::uniform_int_distribution<std::size_t> deg(0, max_degree);
  std::uniform_int_distribution<std::size_t> var(0, nvars - 1);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  QuadPoly p(cap);
  for (std::size_t t = 0; t < terms; ++t) {
    Monomial m;
    const std::size_t d = deg(rng);
    for (std::size_t k = 0; k < d; ++k) m = m * Monomial(static_cast<VarIndex>(var(rng)));
    p.add_term(m, coef(rng));
  }
  return p;
}

}  // namespace qbcast::testkit
