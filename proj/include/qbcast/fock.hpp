#pragma once

// Truncated number-basis engine for the bipartite target/source system.
// Mode 0 is the target (atoms), mode 1 the source (mechanics); the two-mode
// basis index is i0 * N + i1. Quadratures X = a + a^dag, Y = -i(a - a^dag).

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "qbcast/errors.hpp"
#include "qbcast/nlv.hpp"
#include "qbcast/protocol.hpp"

namespace qbcast {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using SpCMat = Eigen::SparseMatrix<cplx>;

inline constexpr double kTailGuard = 1e-6;
inline constexpr int kTailLevels = 5;
inline constexpr int kCubicPadding = 16;

struct FockOperator {
  int dim = 0;
  int modes = 1;
  CMat data;
};

struct FockDensity {
  int dim = 0;
  int modes = 1;
  CMat data;

  double trace() const { return data.trace().real(); }
};

namespace fock {

inline void require_dim(int N) {
  if (N < 2) throw ValidationError("truncation must be >= 2", "fock.N");
}

inline CMat annihilation(int N) {
  CMat a = CMat::Zero(N, N);
  for (int n = 1; n < N; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

inline CMat creation(int N) { return annihilation(N).adjoint(); }

inline CMat number(int N) {
  CMat m = CMat::Zero(N, N);
  for (int n = 0; n < N; ++n) m(n, n) = n;
  return m;
}

inline CMat quad_x(int N) {
  CMat a = annihilation(N);
  return a + a.adjoint();
}

inline CMat quad_y(int N) {
  CMat a = annihilation(N);
  return cplx(0, -1) * (a - a.adjoint());
}

inline CMat kron(const CMat& A, const CMat& B) {
  CMat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

/// Embeds a single-mode operator acting on `mode` into the two-mode space.
inline CMat embed(const CMat& A, int mode) {
  const CMat I = CMat::Identity(A.rows(), A.cols());
  return mode == 0 ? kron(A, I) : kron(I, A);
}

/// (A on `mode`) * M for a two-mode column space, without forming the Kronecker product.
inline CMat apply_left_local(const CMat& A, int mode, const CMat& M) {
  const Eigen::Index N = A.rows();
  const Eigen::Index C = M.cols();
  CMat out(M.rows(), C);
  if (mode == 1) {
    // column c reshaped to V(i1, i0): (I (x) A) acts as A * V
    Eigen::Map<const CMat> in(M.data(), N, N * C);
    Eigen::Map<CMat> res(out.data(), N, N * C);
    res.noalias() = A * in;
  } else {
    const CMat At = A.transpose();
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::Map<const CMat> in(M.col(c).data(), N, N);
      Eigen::Map<CMat> res(out.col(c).data(), N, N);
      res.noalias() = in * At;
    }
  }
  return out;
}

/// (A (x) B) M (A (x) B)^dag.
inline CMat conjugate_local(const CMat& A, const CMat& B, const CMat& M) {
  CMat t = apply_left_local(B, 1, apply_left_local(A, 0, M));
  CMat u = apply_left_local(B, 1, apply_left_local(A, 0, t.adjoint()));
  return u.adjoint();
}

inline SpCMat sparse(const CMat& A) { return A.sparseView(); }

inline void hermitize(CMat& rho) {
  for (Eigen::Index j = 0; j < rho.cols(); ++j) {
    rho(j, j) = rho(j, j).real();
    for (Eigen::Index i = j + 1; i < rho.rows(); ++i) {
      const cplx m = 0.5 * (rho(i, j) + std::conj(rho(j, i)));
      rho(i, j) = m;
      rho(j, i) = std::conj(m);
    }
  }
}

}  // namespace fock

// ---------------------------------------------------------------------------
// states

inline FockDensity fock_number_state(int n, int N) {
  fock::require_dim(N);
  if (n < 0 || n >= N) throw ValidationError("number state outside truncation", "fock.N");
  FockDensity r{N, 1, CMat::Zero(N, N)};
  r.data(n, n) = 1.0;
  return r;
}

inline FockDensity fock_from_ket(const Eigen::VectorXcd& psi, int N, int modes) {
  Eigen::VectorXcd v = psi / psi.norm();
  return {N, modes, v * v.adjoint()};
}

inline Eigen::VectorXcd coherent_ket(cplx alpha, int N) {
  Eigen::VectorXcd v(N);
  v(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < N; ++n) v(n) = v(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  return v;
}

/// Squeezed vacuum exp[(r/2)(a^2 - a^dag^2)]|0>: Var X = e^{-2r}.
inline Eigen::VectorXcd squeezed_vacuum_ket(double r, int N) {
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(N);
  const double t = -std::tanh(r);
  double c = 1.0 / std::sqrt(std::cosh(r));
  for (int m = 0; 2 * m < N; ++m) {
    v(2 * m) = c;
    // sqrt((2m+2)!)/(2^{m+1}(m+1)!) over sqrt((2m)!)/(2^m m!)
    c *= t * std::sqrt((2.0 * m + 1) * (2.0 * m + 2)) / (2.0 * (m + 1));
  }
  return v;
}

/// Single-mode squeeze operator by exponentiating its generator at a padded truncation.
inline CMat squeeze_operator(double r, int N, int padding = 40) {
  const int M = N + padding;
  const CMat a = fock::annihilation(M);
  const CMat K = 0.5 * r * (a * a - a.adjoint() * a.adjoint());
  // K anti-Hermitian: exp(K) = V exp(-i w) V^dag with iK = V w V^dag
  Eigen::SelfAdjointEigenSolver<CMat> es(cplx(0, 1) * K);
  const Eigen::VectorXcd ph = (cplx(0, -1) * es.eigenvalues().cast<cplx>()).array().exp();
  const CMat S = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
  return S.topLeftCorner(N, N);
}

inline FockDensity thermal_density(double n, int N) {
  FockDensity r{N, 1, CMat::Zero(N, N)};
  double p = 1.0 / (n + 1.0);
  const double q = n / (n + 1.0);
  for (int k = 0; k < N; ++k, p *= q) r.data(k, k) = p;
  r.data /= r.trace();
  return r;
}

/// Fock representation of a Gaussian single-mode initial state (renormalized after truncation).
inline FockDensity gaussian_density(const GaussianModeState& s, int N) {
  fock::require_dim(N);
  s.validate();
  FockDensity r;
  switch (s.kind) {
    case GaussianModeState::Kind::Vacuum: r = fock_number_state(0, N); break;
    case GaussianModeState::Kind::Squeezed: r = fock_from_ket(squeezed_vacuum_ket(s.r, N), N, 1); break;
    case GaussianModeState::Kind::Thermal: r = thermal_density(s.n, N); break;
    case GaussianModeState::Kind::SqueezedThermal: {
      const int M = N + 40;
      const CMat S = squeeze_operator(0.5 * std::log(s.S_m), M, 40);
      CMat big = S * thermal_density(s.n, M).data * S.adjoint();
      r = {N, 1, big.topLeftCorner(N, N)};
      r.data /= r.trace();
      break;
    }
  }
  return r;
}

inline FockDensity tensor(const FockDensity& a, const FockDensity& b) {
  if (a.modes != 1 || b.modes != 1 || a.dim != b.dim) throw ValidationError("tensor needs two single-mode states of equal truncation");
  return {a.dim, 2, fock::kron(a.data, b.data)};
}

inline FockDensity partial_trace(const FockDensity& rho, int keep) {
  if (rho.modes != 2) throw ValidationError("partial trace needs a two-mode state");
  if (keep != 0 && keep != 1) throw ValidationError("mode index must be 0 or 1");
  const int N = rho.dim;
  FockDensity out{N, 1, CMat::Zero(N, N)};
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      cplx s = 0;
      for (int k = 0; k < N; ++k) s += keep == 0 ? rho.data(i * N + k, j * N + k) : rho.data(k * N + i, k * N + j);
      out.data(i, j) = s;
    }
  return out;
}

/// Population of the top `levels` number states of `mode`.
inline double tail_population(const FockDensity& rho, int mode = 0, int levels = kTailLevels) {
  const FockDensity m = rho.modes == 2 ? partial_trace(rho, mode) : rho;
  double s = 0;
  for (int k = std::max(0, m.dim - levels); k < m.dim; ++k) s += m.data(k, k).real();
  return s;
}

inline void check_tail(const FockDensity& rho, double guard, const std::string& where) {
  for (int m = 0; m < rho.modes; ++m) {
    const double t = tail_population(rho, m);
    if (t > guard)
      throw TruncationError(where + ": tail population " + std::to_string(t) + " of mode " + std::to_string(m) +
                            " exceeds guard; increase N");
  }
}

struct DensityCheck {
  double trace_error = 0.0;
  double hermiticity = 0.0;
  double min_eigenvalue = 0.0;
};

inline DensityCheck check_density(const FockDensity& rho, bool spectrum = true) {
  DensityCheck c;
  c.trace_error = std::abs(rho.data.trace() - cplx(1.0));
  c.hermiticity = (rho.data - rho.data.adjoint()).cwiseAbs().maxCoeff();
  if (spectrum) {
    Eigen::SelfAdjointEigenSolver<CMat> es(rho.data, Eigen::EigenvaluesOnly);
    c.min_eigenvalue = es.eigenvalues().minCoeff();
  }
  return c;
}

inline double fidelity_pure(const FockDensity& rho, const Eigen::VectorXcd& psi) {
  return (psi.adjoint() * rho.data * psi)(0, 0).real();
}

/// Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2.
inline double fidelity(const FockDensity& a, const FockDensity& b) {
  Eigen::SelfAdjointEigenSolver<CMat> ea(a.data);
  const Eigen::VectorXd wa = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const CMat sa = ea.eigenvectors() * wa.cast<cplx>().asDiagonal() * ea.eigenvectors().adjoint();
  Eigen::SelfAdjointEigenSolver<CMat> em(sa * b.data * sa, Eigen::EigenvaluesOnly);
  const double t = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return t * t;
}

// ---------------------------------------------------------------------------
// expectation values

inline cplx expectation(const FockDensity& rho, const CMat& op) { return (rho.data.cwiseProduct(op.transpose())).sum(); }

inline cplx expectation(const FockDensity& rho, const SpCMat& op) {
  cplx s = 0;
  for (int k = 0; k < op.outerSize(); ++k)
    for (SpCMat::InnerIterator it(op, k); it; ++it) s += it.value() * rho.data(it.col(), it.row());
  return s;
}

/// Quadrature operators in the state's space: (X, Y) for one mode, (X, Y, q, p) for two.
inline std::vector<SpCMat> quadrature_operators(int N, int modes) {
  std::vector<SpCMat> ops;
  const CMat x = fock::quad_x(N), y = fock::quad_y(N);
  if (modes == 1) return {fock::sparse(x), fock::sparse(y)};
  for (int m = 0; m < 2; ++m) {
    ops.push_back(fock::sparse(fock::embed(x, m)));
    ops.push_back(fock::sparse(fock::embed(y, m)));
  }
  return ops;
}

struct FockMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetrized
};

inline FockMoments quadrature_moments(const FockDensity& rho) {
  const auto ops = quadrature_operators(rho.dim, rho.modes);
  const auto k = static_cast<Eigen::Index>(ops.size());
  FockMoments m{Eigen::VectorXd(k), Eigen::MatrixXd(k, k)};
  for (Eigen::Index i = 0; i < k; ++i) m.mean(i) = expectation(rho, ops[i]).real();
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j) {
      const SpCMat ab = ops[i] * ops[j];
      const SpCMat ba = ops[j] * ops[i];
      const double s = 0.5 * (expectation(rho, ab) + expectation(rho, ba)).real();
      m.cov(i, j) = m.cov(j, i) = s - m.mean(i) * m.mean(j);
    }
  return m;
}

/// Nonlinear-variance parabola of a single-mode state with V'(X) = X^(n-1),
/// using the symmetrized cross term.
inline NlvParabola fock_nlv(const FockDensity& rho, int n) {
  if (rho.modes != 1) throw ValidationError("fock_nlv needs a single-mode state");
  if (n < 2) throw ValidationError("nonlinearity order must be >= 2", "nonlinearity.order");
  const int N = rho.dim;
  const CMat X = fock::quad_x(N), Y = fock::quad_y(N);
  CMat V = CMat::Identity(N, N);
  for (int k = 0; k < n - 1; ++k) V = (V * X).eval();
  const double ey = expectation(rho, Y).real();
  const double ev = expectation(rho, V).real();
  const double vy = expectation(rho, CMat(Y * Y)).real() - ey * ey;
  const double vv = expectation(rho, CMat(V * V)).real() - ev * ev;
  const double cross = 0.5 * expectation(rho, CMat(Y * V + V * Y)).real() - ey * ev;
  return {vy, 2 * cross, vv};
}

// ---------------------------------------------------------------------------
// gates

enum class QndType { qy, px };

/// exp(-i g P / 2) with P = Y (x) q (qy) or X (x) p (px), stored in the
/// product eigenbasis of the two local factors.
struct QndGate {
  int dim = 0;
  CMat V0, V1;            // eigenvectors of the target and source factors
  Eigen::VectorXcd phase; // diagonal in the product eigenbasis

  FockDensity apply(const FockDensity& rho) const {
    CMat t = fock::conjugate_local(V0.adjoint(), V1.adjoint(), rho.data);
    t = (phase.asDiagonal() * t * phase.conjugate().asDiagonal()).eval();
    return {rho.dim, 2, fock::conjugate_local(V0, V1, t)};
  }

  Eigen::VectorXcd apply(const Eigen::VectorXcd& psi) const {
    Eigen::VectorXcd t = fock::apply_left_local(V1.adjoint(), 1, fock::apply_left_local(V0.adjoint(), 0, psi));
    t = phase.cwiseProduct(t);
    return fock::apply_left_local(V1, 1, fock::apply_left_local(V0, 0, t));
  }

  CMat matrix() const {
    const auto D = static_cast<Eigen::Index>(dim) * dim;
    CMat d = phase.asDiagonal() * CMat::Identity(D, D);
    CMat left = fock::apply_left_local(V1, 1, fock::apply_left_local(V0, 0, d));
    // left * W^dag = (W * left^dag)^dag
    return fock::apply_left_local(V1, 1, fock::apply_left_local(V0, 0, left.adjoint())).adjoint();
  }
};

inline CMat qnd_product_operator(QndType type, int N) {
  return type == QndType::qy ? fock::kron(fock::quad_y(N), fock::quad_x(N)) : fock::kron(fock::quad_x(N), fock::quad_y(N));
}

namespace detail {

// Heisenberg action of the gate on vacuum (x) vacuum against the linear map.
inline void check_qnd_action(const QndGate& U, double g, QndType type, int N) {
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(N) * N);
  psi(0) = 1.0;
  const Eigen::VectorXcd out = U.apply(psi);
  const FockDensity rho = fock_from_ket(out, N, 2);
  if (tail_population(rho, 0) > kTailGuard || tail_population(rho, 1) > kTailGuard)
    throw TruncationError("QND gate with g=" + std::to_string(g) + " leaves the truncation N=" + std::to_string(N));
  const FockMoments m = quadrature_moments(rho);
  Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
  if (type == QndType::qy) {
    A(kX, kQ) = g;
    A(kP, kY) = -g;
  } else {
    A(kY, kP) = -g;
    A(kQ, kX) = g;
  }
  const Eigen::Matrix4d want = A * A.transpose();
  const double err = std::max((m.cov - want).cwiseAbs().maxCoeff(), m.mean.cwiseAbs().maxCoeff());
  if (err > 1e-6)
    throw TruncationError("QND gate action check failed (error " + std::to_string(err) + "); increase N");
}

}  // namespace detail

inline QndGate make_qnd_gate(double g, QndType type, int N, bool check = true) {
  fock::require_dim(N);
  if (!std::isfinite(g)) throw ValidationError("gate gain must be finite");
  const CMat f0 = type == QndType::qy ? fock::quad_y(N) : fock::quad_x(N);
  const CMat f1 = type == QndType::qy ? fock::quad_x(N) : fock::quad_y(N);
  Eigen::SelfAdjointEigenSolver<CMat> e0(f0), e1(f1);
  QndGate U{N, e0.eigenvectors(), e1.eigenvectors(), Eigen::VectorXcd(static_cast<Eigen::Index>(N) * N)};
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      U.phase(i * N + j) = std::polar(1.0, -0.5 * g * e0.eigenvalues()(i) * e1.eigenvalues()(j));
  if (check && g != 0.0) detail::check_qnd_action(U, g, type, N);
  return U;
}

inline FockOperator build_qnd_unitary(double g, QndType type, int N) {
  return {N, 2, make_qnd_gate(g, type, N).matrix()};
}

/// exp(-i gamma q^n / (2n)), so that p <- p - gamma q^(n-1); built at N + padding and projected.
inline FockOperator build_nonlinear_unitary(double gamma, int n, int N, bool check = true) {
  fock::require_dim(N);
  if (n < 2) throw ValidationError("nonlinearity order must be >= 2", "nonlinearity.order");
  const int M = N + kCubicPadding;
  const Eigen::MatrixXd q = fock::quad_x(M).real();
  Eigen::MatrixXd qn = Eigen::MatrixXd::Identity(M, M);
  for (int k = 0; k < n; ++k) qn = (qn * q).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qn);
  Eigen::VectorXcd ph(M);
  for (int k = 0; k < M; ++k) ph(k) = std::polar(1.0, -gamma * es.eigenvalues()(k) / (2.0 * n));
  const CMat V = es.eigenvectors().cast<cplx>();
  const CMat U = (V * ph.asDiagonal() * V.adjoint()).topLeftCorner(N, N);
  if (check && gamma != 0.0) {
    // p shifts by -gamma <q^(n-1)> on vacuum and on a position-displaced vacuum
    for (double x0 : {0.0, 1.0}) {
      const FockDensity in = fock_from_ket(coherent_ket(0.5 * x0, N), N, 1);
      const FockDensity out{N, 1, U * in.data * U.adjoint()};
      const CMat X = fock::quad_x(N);
      CMat V1 = CMat::Identity(N, N);
      for (int k = 0; k < n - 1; ++k) V1 = (V1 * X).eval();
      const double want = expectation(in, fock::quad_y(N)).real() - gamma * expectation(in, V1).real();
      const double got = expectation(out, fock::quad_y(N)).real();
      if (std::abs(got - want) > 0.02 * std::max(std::abs(want), 1e-3) || tail_population(out) > kTailGuard)
        throw TruncationError("nonlinear gate Heisenberg check failed at N=" + std::to_string(N));
    }
  }
  return {N, 1, U};
}

inline FockOperator build_cubic_unitary(double gamma, int N) { return build_nonlinear_unitary(gamma, 3, N); }

/// U rho U^dag for a unitary on the whole space or on one mode of a two-mode state.
inline FockDensity apply_unitary(const FockDensity& rho, const FockOperator& U, int mode = -1) {
  if (U.modes == rho.modes) return {rho.dim, rho.modes, U.data * rho.data * U.data.adjoint()};
  if (U.modes != 1 || rho.modes != 2 || (mode != 0 && mode != 1))
    throw ValidationError("unitary does not match the state's modes");
  const CMat I = CMat::Identity(rho.dim, rho.dim);
  return {rho.dim, 2, mode == 0 ? fock::conjugate_local(U.data, I, rho.data) : fock::conjugate_local(I, U.data, rho.data)};
}

// ---------------------------------------------------------------------------
// open-system evolution

struct LindbladRates {
  double zeta_a = 0.0;  // target (atomic) decay
  double zeta_m = 0.0;  // source (mechanical) bath coupling
  double n_th = 0.0;    // source bath occupation

  void validate(const std::string& path = "channel") const {
    if (!(zeta_a >= 0) || !(zeta_m >= 0) || !(n_th >= 0) || !std::isfinite(zeta_a) || !std::isfinite(zeta_m) ||
        !std::isfinite(n_th))
      throw ValidationError("rates must be finite and >= 0", path);
  }
  bool zero() const { return zeta_a == 0.0 && zeta_m == 0.0; }
  bool operator==(const LindbladRates&) const = default;
};

struct LindbladOptions {
  double atol = 1e-9;
  double rtol = 1e-7;
  std::size_t max_steps = 200000;
  double tail_guard = kTailGuard;
};

struct LindbladStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

namespace detail {

// d rho/dt = G rho + (G rho)^dag + sum_k c_k rho c_k^dag with
// G = -(i/2) H - (1/2) sum_k c_k^dag c_k; the ladder jumps are applied as index shifts.
struct LindbladRhs {
  SpCMat G;
  double down0 = 0, down1 = 0, up1 = 0;  // rates of a (x) 1, 1 (x) a, 1 (x) a^dag
  Eigen::Index stride0 = 0;              // index shift of one quantum in mode 0
  Eigen::ArrayXd sa0, sa1, su1;          // sqrt(n0 + 1), sqrt(n1 + 1), sqrt(n1); 0 where the shift leaves the space
  mutable CMat t;

  void operator()(const CMat& rho, CMat& out) const {
    const Eigen::Index D = rho.rows();
    t.noalias() = G * rho;
    out = t + t.adjoint();
    for (Eigen::Index j = 0; j < D; ++j) {
      if (down0 > 0 && j + stride0 < D && sa0(j) != 0)
        out.col(j).head(D - stride0).array() +=
            (down0 * sa0(j)) * sa0.head(D - stride0) * rho.col(j + stride0).tail(D - stride0).array();
      if (down1 > 0 && j + 1 < D && sa1(j) != 0)
        out.col(j).head(D - 1).array() += (down1 * sa1(j)) * sa1.head(D - 1) * rho.col(j + 1).tail(D - 1).array();
      if (up1 > 0 && j > 0 && su1(j) != 0)
        out.col(j).tail(D - 1).array() += (up1 * su1(j)) * su1.tail(D - 1) * rho.col(j - 1).head(D - 1).array();
    }
  }
};

inline LindbladRhs make_rhs(const FockOperator& H, const LindbladRates& r, int N, int modes) {
  LindbladRhs f;
  const Eigen::Index D = modes == 1 ? N : static_cast<Eigen::Index>(N) * N;
  // single-mode states are treated as the source mode
  if (modes == 2) f.down0 = r.zeta_a;
  f.down1 = r.zeta_m * (r.n_th + 1);
  f.up1 = r.zeta_m * r.n_th;
  f.stride0 = modes == 2 ? N : D;
  f.sa0.resize(D);
  f.sa1.resize(D);
  f.su1.resize(D);
  Eigen::VectorXcd diag(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    const auto n0 = static_cast<double>(modes == 2 ? i / N : 0);
    const auto n1 = static_cast<double>(i % N);
    f.sa0(i) = modes == 2 && n0 + 1 < N ? std::sqrt(n0 + 1) : 0.0;
    f.sa1(i) = n1 + 1 < N ? std::sqrt(n1 + 1) : 0.0;
    f.su1(i) = std::sqrt(n1);
    // c^dag c of the truncated ladder operators
    diag(i) = -0.5 * (f.down0 * n0 + f.down1 * n1 + f.up1 * (n1 + 1 < N ? n1 + 1 : 0.0));
  }
  f.G = cplx(0, -0.5) * fock::sparse(H.data);
  SpCMat d(D, D);
  d.reserve(Eigen::VectorXi::Constant(D, 1));
  for (Eigen::Index i = 0; i < D; ++i)
    if (diag(i) != 0.0) d.insert(i, i) = diag(i);
  f.G += d;
  f.G.makeCompressed();
  f.t.resize(D, D);
  return f;
}

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) integration of the master equation over [0, T];
/// rho is re-Hermitized and renormalized after every accepted step.
inline FockDensity lindblad_evolve(const FockDensity& rho0, const FockOperator& H, const LindbladRates& rates, double T,
                                   const LindbladOptions& opt = {}, LindbladStats* stats = nullptr) {
  rates.validate();
  if (!(T >= 0) || !std::isfinite(T)) throw ValidationError("duration must be finite and >= 0", "channel.T_gate");
  if (H.data.rows() != rho0.data.rows()) throw ValidationError("Hamiltonian does not match the state dimension");
  const detail::LindbladRhs f = detail::make_rhs(H, rates, rho0.dim, rho0.modes);

  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  CMat y = rho0.data;
  const auto n = y.rows();
  CMat k1(n, n), k2(n, n), k3(n, n), k4(n, n), k5(n, n), k6(n, n), k7(n, n), yt(n, n), err(n, n);
  f(y, k1);
  double t = 0.0;
  double h = T > 0 ? std::min(T, 0.01) : 0.0;
  LindbladStats st;
  std::size_t steps = 0;
  while (t < T) {
    if (++steps > opt.max_steps) throw NumericalError("master equation: tolerance not met within max steps");
    if (t + h > T) h = T - t;
    yt = y + h * a21 * k1;
    f(yt, k2);
    yt = y + h * (a31 * k1 + a32 * k2);
    f(yt, k3);
    yt = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(yt, k4);
    yt = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(yt, k5);
    yt = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(yt, k6);
    yt = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(yt, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    // max norm: the truncation tail must be resolved as tightly as the bulk
    const double en =
        (err.cwiseAbs().array() / (opt.atol + opt.rtol * y.cwiseAbs().array().max(yt.cwiseAbs().array()))).maxCoeff();
    if (!std::isfinite(en)) throw NumericalError("master equation: non-finite error estimate");
    if (en <= 1.0) {
      t += h;
      y.swap(yt);
      fock::hermitize(y);
      y /= y.trace().real();
      k1.swap(k7);
      ++st.accepted;
    } else {
      ++st.rejected;
    }
    const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
    h *= en <= 1.0 ? fac : std::min(fac, 1.0);
    if (h < 1e-14 * std::max(1.0, T)) throw NumericalError("master equation: step size underflow");
  }
  if (stats) *stats = st;
  FockDensity out{rho0.dim, rho0.modes, y};
  check_tail(out, opt.tail_guard, "master equation");
  return out;
}

// ---------------------------------------------------------------------------
// protocol

struct FockProtocolSpec {
  RegimeSpec regime;
  double gamma = 0.15;
  int order = 3;
  LindbladRates rates;
  double T_gate = 1.0;
  int N = 40;
  GaussianModeState target;
  GaussianModeState source;
  LindbladOptions ode;

  void validate() const {
    if (N < 2) throw ValidationError("truncation must be >= 2", "fock.N");
    if (order < 2) throw ValidationError("nonlinearity order must be >= 2", "nonlinearity.order");
    if (!std::isfinite(gamma)) throw ValidationError("gamma must be finite", "nonlinearity.gamma");
    rates.validate("channel");
    if (!(T_gate > 0) || !std::isfinite(T_gate)) throw ValidationError("gate duration must be > 0", "channel.T_gate");
    target.validate("initial.target");
    source.validate("initial.source");
    regime.expand();
  }
};

struct FockProtocolResult {
  FockDensity rho_after_nl;
  FockDensity rho_final;
  LindbladStats ode;
};

namespace detail {

inline FockDensity run_qnd_segment(const FockDensity& rho, double g, QndType type, const FockProtocolSpec& spec,
                                   LindbladStats& acc) {
  if (spec.rates.zero()) {
    FockDensity out = make_qnd_gate(g, type, spec.N).apply(rho);
    check_tail(out, spec.ode.tail_guard, "QND gate");
    return out;
  }
  FockOperator H{spec.N, 2, (g / spec.T_gate) * qnd_product_operator(type, spec.N)};
  LindbladStats st;
  FockDensity out = lindblad_evolve(rho, H, spec.rates, spec.T_gate, spec.ode, &st);
  acc.accepted += st.accepted;
  acc.rejected += st.rejected;
  return out;
}

}  // namespace detail

/// qy(g1), px(g2), nonlinearity on the source, px(g3), qy(g4); the simplified
/// regime runs only the two px gates.
inline FockProtocolResult run_fock_protocol(const FockProtocolSpec& spec) {
  spec.validate();
  const auto g = spec.regime.expand();
  const bool four = spec.regime.gate_count() == 4;
  FockProtocolResult res;
  FockDensity rho = tensor(gaussian_density(spec.target, spec.N), gaussian_density(spec.source, spec.N));
  check_tail(rho, spec.ode.tail_guard, "initial state");
  if (four) rho = detail::run_qnd_segment(rho, g[0], QndType::qy, spec, res.ode);
  rho = detail::run_qnd_segment(rho, g[1], QndType::px, spec, res.ode);
  rho = apply_unitary(rho, build_nonlinear_unitary(spec.gamma, spec.order, spec.N), 1);
  check_tail(rho, spec.ode.tail_guard, "nonlinearity");
  res.rho_after_nl = rho;
  rho = detail::run_qnd_segment(rho, g[2], QndType::px, spec, res.ode);
  if (four) rho = detail::run_qnd_segment(rho, g[3], QndType::qy, spec, res.ode);
  res.rho_final = std::move(rho);
  return res;
}

}  // namespace qbcast
