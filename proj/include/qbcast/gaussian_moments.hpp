#pragma once

// Polynomial algebra over jointly Gaussian scalar variables and exact moment
// evaluation (Isserlis/Wick pairing). Quadratures of the Heisenberg picture are
// QuadPoly values over the input variables registered in a GaussianEnsemble.
//
// Units: hbar = 2, so a ground-state quadrature has variance 1 and a conjugate
// pair satisfies [x, y] = 2i.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qbcast/errors.hpp"

namespace qbcast {

using VarIndex = std::uint16_t;

enum class Role : std::uint8_t {
  AtomX,
  AtomY,
  MechQ,
  MechP,
  MediatorX,
  MediatorY,
  Vacuum,
  Thermal,
};

inline const char* to_string(Role r) {
  switch (r) {
    case Role::AtomX: return "atom-X";
    case Role::AtomY: return "atom-Y";
    case Role::MechQ: return "mech-q";
    case Role::MechP: return "mech-p";
    case Role::MediatorX: return "mediator-X";
    case Role::MediatorY: return "mediator-Y";
    case Role::Vacuum: return "vacuum";
    case Role::Thermal: return "thermal";
  }
  return "?";
}

struct VariableId {
  VarIndex index = 0;
  Role role = Role::Vacuum;
};

inline constexpr std::size_t kDefaultDegreeCap = 4;
inline constexpr double kPruneThreshold = 1e-15;

/// Product of variables, stored as a sorted multiset of indices.
class Monomial {
 public:
  static constexpr std::size_t kMaxDegree = 16;

  Monomial() = default;
  explicit Monomial(VarIndex v) : size_(1) { vars_[0] = v; }
  Monomial(std::initializer_list<VarIndex> vs) {
    if (vs.size() > kMaxDegree) throw DegreeCapError("monomial degree exceeds storage limit");
    for (VarIndex v : vs) vars_[size_++] = v;
    std::sort(vars_.begin(), vars_.begin() + size_);
  }

  std::size_t degree() const noexcept { return size_; }
  VarIndex operator[](std::size_t i) const noexcept { return vars_[i]; }
  std::span<const VarIndex> vars() const noexcept { return {vars_.data(), size_}; }

  /// Exponent of variable v in this monomial.
  std::size_t power(VarIndex v) const noexcept {
    return static_cast<std::size_t>(std::count(vars_.begin(), vars_.begin() + size_, v));
  }

  friend Monomial operator*(const Monomial& a, const Monomial& b) {
    if (a.size_ + b.size_ > kMaxDegree) {
      throw DegreeCapError("monomial product " + a.str() + " * " + b.str() +
                           " exceeds storage limit");
    }
    Monomial out;
    std::merge(a.vars_.begin(), a.vars_.begin() + a.size_, b.vars_.begin(),
               b.vars_.begin() + b.size_, out.vars_.begin());
    out.size_ = static_cast<std::uint8_t>(a.size_ + b.size_);
    return out;
  }

  /// The monomial with one factor of v removed. Requires power(v) > 0.
  Monomial without_one(VarIndex v) const {
    Monomial out;
    bool removed = false;
    for (std::size_t i = 0; i < size_; ++i) {
      if (!removed && vars_[i] == v) {
        removed = true;
        continue;
      }
      out.vars_[out.size_++] = vars_[i];
    }
    return out;
  }

  friend bool operator==(const Monomial& a, const Monomial& b) noexcept {
    return a.size_ == b.size_ && std::equal(a.vars_.begin(), a.vars_.begin() + a.size_, b.vars_.begin());
  }
  friend bool operator<(const Monomial& a, const Monomial& b) noexcept {
    if (a.size_ != b.size_) return a.size_ < b.size_;
    return std::lexicographical_compare(a.vars_.begin(), a.vars_.begin() + a.size_, b.vars_.begin(),
                                        b.vars_.begin() + b.size_);
  }

  std::string str() const {
    if (size_ == 0) return "1";
    std::ostringstream os;
    std::size_t i = 0;
    bool first = true;
    while (i < size_) {
      std::size_t j = i;
      while (j < size_ && vars_[j] == vars_[i]) ++j;
      if (!first) os << '*';
      os << 'v' << vars_[i];
      if (j - i > 1) os << '^' << (j - i);
      first = false;
      i = j;
    }
    return os.str();
  }

 private:
  std::array<VarIndex, kMaxDegree> vars_{};
  std::uint8_t size_ = 0;
};

/// Real-coefficient multivariate polynomial. Terms with |coefficient| below
/// kPruneThreshold are dropped whenever coefficients are collected.
class QuadPoly {
 public:
  using TermMap = std::map<Monomial, double>;

  explicit QuadPoly(std::size_t degree_cap = kDefaultDegreeCap) : cap_(degree_cap) {
    if (cap_ > Monomial::kMaxDegree) throw DegreeCapError("degree cap exceeds storage limit");
  }

  static QuadPoly constant(double c, std::size_t degree_cap = kDefaultDegreeCap) {
    QuadPoly p(degree_cap);
    p.add_term(Monomial{}, c);
    return p;
  }

  static QuadPoly variable(VarIndex v, std::size_t degree_cap = kDefaultDegreeCap) {
    QuadPoly p(degree_cap);
    p.add_term(Monomial(v), 1.0);
    return p;
  }

  std::size_t degree_cap() const noexcept { return cap_; }
  const TermMap& terms() const noexcept { return terms_; }
  bool is_zero() const noexcept { return terms_.empty(); }
  std::size_t size() const noexcept { return terms_.size(); }

  std::size_t degree() const noexcept {
    // Map is ordered by degree first, so the last term has the largest.
    return terms_.empty() ? 0 : terms_.rbegin()->first.degree();
  }

  double coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }
  double coefficient(VarIndex v) const { return coefficient(Monomial(v)); }
  double constant_term() const { return coefficient(Monomial{}); }

  void add_term(const Monomial& m, double c) {
    if (m.degree() > cap_) {
      throw DegreeCapError("term " + m.str() + " has degree " + std::to_string(m.degree()) +
                           " above cap " + std::to_string(cap_));
    }
    auto [it, inserted] = terms_.try_emplace(m, c);
    if (!inserted) it->second += c;
    if (std::abs(it->second) < kPruneThreshold) terms_.erase(it);
  }

  /// Variables appearing in any term, ascending.
  std::vector<VarIndex> variables() const {
    std::vector<VarIndex> out;
    for (const auto& [m, c] : terms_)
      for (VarIndex v : m.vars()) out.push_back(v);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Degree-1 and degree-0 part.
  QuadPoly linear_part() const {
    QuadPoly out(cap_);
    for (const auto& [m, c] : terms_)
      if (m.degree() <= 1) out.terms_.emplace(m, c);
    return out;
  }

  /// Set every listed variable to zero.
  QuadPoly without_variables(std::span<const VarIndex> drop) const {
    QuadPoly out(cap_);
    for (const auto& [m, c] : terms_) {
      bool keep = std::none_of(m.vars().begin(), m.vars().end(), [&](VarIndex v) {
        return std::find(drop.begin(), drop.end(), v) != drop.end();
      });
      if (keep) out.terms_.emplace(m, c);
    }
    return out;
  }

  double evaluate(std::span<const double> values) const {
    double sum = 0.0;
    for (const auto& [m, c] : terms_) {
      double t = c;
      for (VarIndex v : m.vars()) t *= values[v];
      sum += t;
    }
    return sum;
  }

  QuadPoly& operator+=(const QuadPoly& o) {
    cap_ = std::max(cap_, o.cap_);
    for (const auto& [m, c] : o.terms_) add_term(m, c);
    return *this;
  }
  QuadPoly& operator-=(const QuadPoly& o) {
    cap_ = std::max(cap_, o.cap_);
    for (const auto& [m, c] : o.terms_) add_term(m, -c);
    return *this;
  }
  QuadPoly& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto it = terms_.begin(); it != terms_.end();) {
      it->second *= s;
      if (std::abs(it->second) < kPruneThreshold)
        it = terms_.erase(it);
      else
        ++it;
    }
    return *this;
  }

  /// a += s * b, without a temporary.
  QuadPoly& add_scaled(const QuadPoly& b, double s) {
    if (s == 0.0) return *this;
    cap_ = std::max(cap_, b.cap_);
    for (const auto& [m, c] : b.terms_) add_term(m, s * c);
    return *this;
  }

  friend QuadPoly operator+(QuadPoly a, const QuadPoly& b) { return a += b; }
  friend QuadPoly operator-(QuadPoly a, const QuadPoly& b) { return a -= b; }
  friend QuadPoly operator*(QuadPoly a, double s) { return a *= s; }
  friend QuadPoly operator*(double s, QuadPoly a) { return a *= s; }
  friend QuadPoly operator-(QuadPoly a) { return a *= -1.0; }

  friend QuadPoly operator*(const QuadPoly& a, const QuadPoly& b) {
    QuadPoly out(std::max(a.cap_, b.cap_));
    for (const auto& [ma, ca] : a.terms_) {
      for (const auto& [mb, cb] : b.terms_) {
        if (ma.degree() + mb.degree() > out.cap_) {
          throw DegreeCapError("product term " + ma.str() + " * " + mb.str() + " has degree " +
                               std::to_string(ma.degree() + mb.degree()) + " above cap " +
                               std::to_string(out.cap_));
        }
        out.add_term(ma * mb, ca * cb);
      }
    }
    return out;
  }

  QuadPoly pow(std::size_t k) const {
    QuadPoly out = constant(1.0, cap_);
    for (std::size_t i = 0; i < k; ++i) out = out * (*this);
    return out;
  }

  /// Largest absolute coefficient difference over the union of supports.
  friend double max_abs_difference(const QuadPoly& a, const QuadPoly& b) {
    double d = 0.0;
    for (const auto& [m, c] : a.terms_) d = std::max(d, std::abs(c - b.coefficient(m)));
    for (const auto& [m, c] : b.terms_)
      if (!a.terms_.contains(m)) d = std::max(d, std::abs(c));
    return d;
  }

  friend bool operator==(const QuadPoly& a, const QuadPoly& b) { return a.terms_ == b.terms_; }

  std::string str() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    os.precision(17);
    bool first = true;
    for (const auto& [m, c] : terms_) {
      if (!first) os << (c < 0 ? " - " : " + ");
      else if (c < 0) os << '-';
      os << std::abs(c);
      if (m.degree() > 0) os << '*' << m.str();
      first = false;
    }
    return os.str();
  }

 private:
  TermMap terms_;
  std::size_t cap_;
};

/// Replace each mapped variable by its polynomial and expand. Unmapped
/// variables are left in place.
inline QuadPoly poly_substitute(const QuadPoly& p, const std::map<VarIndex, QuadPoly>& map) {
  std::size_t cap = p.degree_cap();
  for (const auto& [v, r] : map) cap = std::max(cap, r.degree_cap());
  QuadPoly out(cap);
  for (const auto& [m, c] : p.terms()) {
    QuadPoly term = QuadPoly::constant(c, cap);
    for (VarIndex v : m.vars()) {
      auto it = map.find(v);
      if (it == map.end()) {
        term = term * QuadPoly::variable(v, cap);
      } else {
        term = term * it->second;
      }
    }
    out += term;
  }
  return out;
}

/// Mean vector and symmetrized covariance of the registered input variables.
class GaussianEnsemble {
 public:
  struct ConjugatePair {
    VarIndex x = 0;
    VarIndex y = 0;
    // [x, y] = 2i * commutator
    double commutator = 1.0;
    bool physical = false;
  };

  std::size_t size() const noexcept { return means_.size(); }
  double mean(VarIndex v) const { return means_.at(v); }
  double covariance(VarIndex a, VarIndex b) const {
    check(a);
    check(b);
    return cov_(a, b);
  }
  double variance(VarIndex v) const { return covariance(v, v); }
  Role role(VarIndex v) const { return roles_.at(v); }
  const std::string& name(VarIndex v) const { return names_.at(v); }
  const std::vector<double>& means() const noexcept { return means_; }
  const Eigen::MatrixXd& covariance_matrix() const noexcept { return cov_; }
  const std::vector<ConjugatePair>& pairs() const noexcept { return pairs_; }

  VarIndex add_variable(Role role, std::string name, double variance, double mean = 0.0) {
    if (size() >= std::size_t{65535}) throw ValidationError("too many variables in ensemble");
    if (!(variance >= 0.0) || !std::isfinite(variance))
      throw ValidationError("variance of '" + name + "' must be finite and non-negative");
    const auto idx = static_cast<VarIndex>(size());
    means_.push_back(mean);
    roles_.push_back(role);
    names_.push_back(std::move(name));
    cov_.conservativeResize(idx + 1, idx + 1);
    cov_.row(idx).setZero();
    cov_.col(idx).setZero();
    cov_(idx, idx) = variance;
    return idx;
  }

  /// Registers x and y together with [x, y] = 2i * commutator.
  std::pair<VarIndex, VarIndex> add_conjugate_pair(Role rx, std::string nx, double var_x, Role ry,
                                                   std::string ny, double var_y, bool physical,
                                                   double commutator = 1.0) {
    VarIndex x = add_variable(rx, std::move(nx), var_x);
    VarIndex y = add_variable(ry, std::move(ny), var_y);
    pairs_.push_back({x, y, commutator, physical});
    return {x, y};
  }

  void set_covariance(VarIndex a, VarIndex b, double c) {
    check(a);
    check(b);
    cov_(a, b) = c;
    cov_(b, a) = c;
  }

  void set_mean(VarIndex v, double m) { means_.at(v) = m; }

  /// [a, b] / 2i from the registered pairs.
  double commutator(VarIndex a, VarIndex b) const {
    for (const auto& p : pairs_) {
      if (p.x == a && p.y == b) return p.commutator;
      if (p.x == b && p.y == a) return -p.commutator;
    }
    return 0.0;
  }

  /// Throws ValidationError when the covariance is not symmetric PSD or a
  /// physical pair violates Var(x) Var(y) >= |commutator|^2.
  void validate(double tol = 1e-10) const {
    if (size() == 0) return;
    if (!cov_.isApprox(cov_.transpose(), 1e-12))
      throw ValidationError("covariance matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, cov_.diagonal().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -tol * scale)
      throw ValidationError("covariance matrix is not positive semidefinite");
    for (const auto& p : pairs_) {
      if (!p.physical) continue;
      const double lhs = cov_(p.x, p.x) * cov_(p.y, p.y);
      if (lhs < p.commutator * p.commutator - tol) {
        throw ValidationError("pair (" + names_[p.x] + ", " + names_[p.y] +
                              ") violates the Heisenberg bound");
      }
    }
  }

 private:
  void check(VarIndex v) const {
    if (v >= size()) throw ValidationError("variable v" + std::to_string(v) + " is not registered");
  }

  std::vector<double> means_;
  std::vector<Role> roles_;
  std::vector<std::string> names_;
  std::vector<ConjugatePair> pairs_;
  Eigen::MatrixXd cov_;
};

namespace detail {

inline void require_registered(const QuadPoly& p, const GaussianEnsemble& e) {
  for (const auto& [m, c] : p.terms())
    for (VarIndex v : m.vars())
      if (v >= e.size())
        throw ValidationError("variable v" + std::to_string(v) + " is not registered in the ensemble");
}

// E[x_{v0} ... x_{v(n-1)}] for a Gaussian with means mu and covariance S,
// by the recursion E[x1 R] = mu1 E[R] + sum_j S(1,j) E[R \ x_j].
inline double isserlis_moment(const VarIndex* vars, std::size_t n, const GaussianEnsemble& e) {
  if (n == 0) return 1.0;
  const VarIndex first = vars[0];
  const VarIndex* rest = vars + 1;
  const std::size_t m = n - 1;
  double result = 0.0;
  const double mu = e.means()[first];
  if (mu != 0.0) result += mu * isserlis_moment(rest, m, e);
  if (m == 0) return result;
  const auto& S = e.covariance_matrix();
  std::array<VarIndex, 2 * Monomial::kMaxDegree> buf{};
  for (std::size_t j = 0; j < m; ++j) {
    const double s = S(first, rest[j]);
    if (s == 0.0) continue;
    std::size_t k = 0;
    for (std::size_t i = 0; i < m; ++i)
      if (i != j) buf[k++] = rest[i];
    result += s * isserlis_moment(buf.data(), k, e);
  }
  return result;
}

inline double monomial_moment(const Monomial& a, const GaussianEnsemble& e) {
  return isserlis_moment(a.vars().data(), a.degree(), e);
}

inline double product_moment(const Monomial& a, const Monomial& b, const GaussianEnsemble& e) {
  std::array<VarIndex, 2 * Monomial::kMaxDegree> buf{};
  std::size_t k = 0;
  for (VarIndex v : a.vars()) buf[k++] = v;
  for (VarIndex v : b.vars()) buf[k++] = v;
  return isserlis_moment(buf.data(), k, e);
}

// Degree <= 2 polynomial as c + b.x + x'Ax over a local variable list.
struct QuadraticForm {
  double c = 0.0;
  Eigen::VectorXd b;
  Eigen::MatrixXd A;
};

inline QuadraticForm to_quadratic_form(const QuadPoly& p, const std::vector<int>& local, int n) {
  QuadraticForm q;
  q.b = Eigen::VectorXd::Zero(n);
  q.A = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [m, c] : p.terms()) {
    switch (m.degree()) {
      case 0: q.c += c; break;
      case 1: q.b(local[m[0]]) += c; break;
      case 2: {
        const int i = local[m[0]];
        const int j = local[m[1]];
        if (i == j) {
          q.A(i, i) += c;
        } else {
          q.A(i, j) += 0.5 * c;
          q.A(j, i) += 0.5 * c;
        }
        break;
      }
      default: break;
    }
  }
  return q;
}

// Means and covariance matrix of a batch of degree <= 2 polynomials in closed
// form: for p = c + b.x + x'Ax with x = mu + d,
//   E p = c + b.mu + mu'A mu + tr(A S),
//   Cov(p, r) = bp~' S br~ + 2 tr(Ap S Ar S),   b~ = b + 2 A mu.
inline void quadratic_moments(std::span<const QuadPoly* const> polys, const GaussianEnsemble& e,
                              Eigen::VectorXd& means, Eigen::MatrixXd& cov) {
  std::vector<VarIndex> vars;
  for (const QuadPoly* p : polys) {
    auto v = p->variables();
    vars.insert(vars.end(), v.begin(), v.end());
  }
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  const int n = static_cast<int>(vars.size());
  std::vector<int> local(e.size(), -1);
  for (int i = 0; i < n; ++i) local[vars[i]] = i;

  Eigen::VectorXd mu(n);
  Eigen::MatrixXd S(n, n);
  for (int i = 0; i < n; ++i) {
    mu(i) = e.means()[vars[i]];
    for (int j = 0; j < n; ++j) S(i, j) = e.covariance_matrix()(vars[i], vars[j]);
  }

  const auto k = static_cast<Eigen::Index>(polys.size());
  means.resize(k);
  cov.resize(k, k);
  std::vector<Eigen::VectorXd> btilde(polys.size());
  std::vector<Eigen::MatrixXd> AS(polys.size());
  for (Eigen::Index i = 0; i < k; ++i) {
    QuadraticForm q = to_quadratic_form(*polys[i], local, n);
    means(i) = q.c + q.b.dot(mu) + mu.dot(q.A * mu) + (q.A.cwiseProduct(S)).sum();
    btilde[i] = q.b + 2.0 * q.A * mu;
    AS[i] = q.A * S;
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      // tr(X Y) = sum_ab X_ab Y_ba
      const double tr = (AS[i].cwiseProduct(AS[j].transpose())).sum();
      cov(i, j) = btilde[i].dot(S * btilde[j]) + 2.0 * tr;
      cov(j, i) = cov(i, j);
    }
  }
}

}  // namespace detail

/// E[p] under the Gaussian law of the ensemble.
inline double gaussian_expectation(const QuadPoly& p, const GaussianEnsemble& e) {
  detail::require_registered(p, e);
  double sum = 0.0;
  for (const auto& [m, c] : p.terms()) sum += c * detail::monomial_moment(m, e);
  return sum;
}

/// Means and symmetrized covariance matrix of several polynomials at once.
/// Uses the closed quadratic-form route when every polynomial has degree <= 2
/// and term-by-term Isserlis pairing otherwise.
inline Eigen::MatrixXd gaussian_covariances(std::span<const QuadPoly* const> polys,
                                            const GaussianEnsemble& e,
                                            Eigen::VectorXd* means_out = nullptr) {
  for (const QuadPoly* p : polys) detail::require_registered(*p, e);
  const bool quadratic =
      std::all_of(polys.begin(), polys.end(), [](const QuadPoly* p) { return p->degree() <= 2; });
  Eigen::VectorXd means;
  Eigen::MatrixXd cov;
  if (quadratic) {
    detail::quadratic_moments(polys, e, means, cov);
  } else {
    const auto k = static_cast<Eigen::Index>(polys.size());
    means.resize(k);
    cov.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i) means(i) = gaussian_expectation(*polys[i], e);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = i; j < k; ++j) {
        double second = 0.0;
        for (const auto& [ma, ca] : polys[i]->terms())
          for (const auto& [mb, cb] : polys[j]->terms())
            second += ca * cb * detail::product_moment(ma, mb, e);
        cov(i, j) = second - means(i) * means(j);
        cov(j, i) = cov(i, j);
      }
    }
  }
  if (means_out) *means_out = means;
  return cov;
}

inline double gaussian_covariance(const QuadPoly& p, const QuadPoly& r, const GaussianEnsemble& e) {
  const QuadPoly* ps[] = {&p, &r};
  return gaussian_covariances(ps, e)(0, 1);
}

/// Var[p] = E[p^2] - E[p]^2, clamped to zero when within 1e-12 below it.
inline double gaussian_variance(const QuadPoly& p, const GaussianEnsemble& e) {
  const QuadPoly* ps[] = {&p};
  const double v = gaussian_covariances(ps, e)(0, 0);
  if (v < 0.0 && v >= -1e-12) return 0.0;
  if (v < 0.0) throw NumericalError("negative variance " + std::to_string(v));
  return v;
}

}  // namespace qbcast
