#pragma once

// Wigner function of a single-mode Fock-basis state (hbar = 2: vacuum W(0,0) = 1/2pi),
// evaluated with the Laguerre-series Clenshaw recurrence over the density-matrix diagonals.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "qbcast/errors.hpp"
#include "qbcast/fock.hpp"

namespace qbcast {

struct WignerGridSpec {
  double x_min = -6.0, x_max = 6.0;
  double y_min = -6.0, y_max = 6.0;
  int nx = 121, ny = 121;

  bool operator==(const WignerGridSpec&) const = default;

  void validate(const std::string& path = "analysis.grid") const {
    if (!(x_min < x_max) || !(y_min < y_max) || !std::isfinite(x_min) || !std::isfinite(x_max) ||
        !std::isfinite(y_min) || !std::isfinite(y_max))
      throw ValidationError("grid ranges must be finite and increasing", path);
    if (nx < 2 || ny < 2) throw ValidationError("grid needs at least 2 points per axis", path);
  }
  double dx() const { return (x_max - x_min) / (nx - 1); }
  double dy() const { return (y_max - y_min) / (ny - 1); }
  double x(int i) const { return x_min + i * dx(); }
  double y(int j) const { return y_min + j * dy(); }
};

struct WignerGrid {
  WignerGridSpec spec;
  Eigen::MatrixXd values;  // values(j, i) at (x(i), y(j))
  bool coarse = false;     // resolution below 32 points per axis

  double integral() const { return values.sum() * spec.dx() * spec.dy(); }
};

struct NegativityMetrics {
  double min_value = 0.0;
  double negative_volume = 0.0;
};

namespace detail {

// sum_k c_k L_k^{(L)}(x) with the normalized recurrence
inline Eigen::ArrayXXcd laguerre_series(int L, const Eigen::ArrayXXd& x, const std::vector<cplx>& c) {
  const auto m = static_cast<int>(c.size());
  Eigen::ArrayXXcd y0, y1;
  if (m == 1) {
    y0 = Eigen::ArrayXXcd::Constant(x.rows(), x.cols(), c[0]);
    y1 = Eigen::ArrayXXcd::Zero(x.rows(), x.cols());
  } else {
    y0 = Eigen::ArrayXXcd::Constant(x.rows(), x.cols(), c[m - 2]);
    y1 = Eigen::ArrayXXcd::Constant(x.rows(), x.cols(), c[m - 1]);
    int k = m;
    for (int i = 3; i <= m; ++i) {
      --k;
      const double a = std::sqrt(static_cast<double>((k - 1) * (L + k - 1)) / static_cast<double>((L + k) * k));
      const double b = 1.0 / std::sqrt(static_cast<double>((L + k) * k));
      Eigen::ArrayXXcd t = c[m - i] - y1 * a;
      y1 = y0 - y1 * ((L + 2 * k - 1) - x) * b;
      y0 = std::move(t);
    }
  }
  return y0 - y1 * ((L + 1) - x) / std::sqrt(static_cast<double>(L + 1));
}

}  // namespace detail

inline WignerGrid wigner(const FockDensity& rho, const WignerGridSpec& spec) {
  if (rho.modes != 1) throw ValidationError("wigner needs a single-mode state");
  spec.validate();
  const int M = rho.dim;
  Eigen::ArrayXXd X(spec.ny, spec.nx), Y(spec.ny, spec.nx);
  for (int j = 0; j < spec.ny; ++j)
    for (int i = 0; i < spec.nx; ++i) {
      X(j, i) = spec.x(i);
      Y(j, i) = spec.y(j);
    }
  Eigen::ArrayXXcd A(spec.ny, spec.nx);
  A.real() = X;
  A.imag() = Y;
  const Eigen::ArrayXXd B = X.square() + Y.square();

  Eigen::ArrayXXcd w = Eigen::ArrayXXcd::Constant(spec.ny, spec.nx, 2.0 * rho.data(0, M - 1));
  for (int L = M - 1; L > 0;) {
    --L;
    std::vector<cplx> diag(static_cast<std::size_t>(M - L));
    for (int i = 0; i + L < M; ++i) diag[static_cast<std::size_t>(i)] = (L == 0 ? 1.0 : 2.0) * rho.data(i, i + L);
    w = detail::laguerre_series(L, B, diag) + w * A / std::sqrt(static_cast<double>(L + 1));
  }
  WignerGrid g;
  g.spec = spec;
  g.values = (w.real() * (-0.5 * B).exp() / (2.0 * std::numbers::pi)).matrix();
  g.coarse = spec.nx < 32 || spec.ny < 32;
  return g;
}

inline NegativityMetrics negativity_metrics(const WignerGrid& w) {
  NegativityMetrics m;
  m.min_value = w.values.minCoeff();
  m.negative_volume = (-w.values.array()).max(0.0).sum() * w.spec.dx() * w.spec.dy();
  return m;
}

}  // namespace qbcast
