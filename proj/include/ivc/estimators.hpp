#pragma once

// Unified C-matrix IV estimators: beta_hat = (X'C'X)^{-1} X'C'y, where C is
// drawn from one of five one-parameter families (k-, lambda1-, lambda2-,
// omega1-, omega2-class). C is applied through the thin projection basis and
// diagonal row scalings, so every product costs O(N K c).

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "ivc/design.hpp"
#include "ivc/errors.hpp"

namespace ivc {

// C = (1-k) I + k P_Z
template <typename Scalar = double>
struct KClass {
  Scalar k;
};

// C = (I - lambda D)^{-1} (P_Z - lambda D)
template <typename Scalar = double>
struct Lambda1 {
  Scalar lambda;
};

// C = P_Z - lambda D
template <typename Scalar = double>
struct Lambda2 {
  Scalar lambda;
};

// C = (I - D + omega I)^{-1} (P_Z - D + omega I)
template <typename Scalar = double>
struct Omega1 {
  Scalar omega;
};

// C = P_Z - D + omega I
template <typename Scalar = double>
struct Omega2 {
  Scalar omega;
};

template <typename Scalar = double>
using EstimatorFamily =
    std::variant<KClass<Scalar>, Lambda1<Scalar>, Lambda2<Scalar>, Omega1<Scalar>, Omega2<Scalar>>;

enum class InputMode { Raw, Partialled };

template <typename Scalar = double>
struct EstimatorSpec {
  EstimatorFamily<Scalar> family;
  InputMode input_mode = InputMode::Raw;
  std::string label;
  /// Non-empty when the request was rewritten, e.g. a partialled-mode name
  /// applied to data without controls.
  std::string note;
};

enum class NamedEstimator {
  OLS,
  TSLS,
  Nagar,
  AUK,
  JIVE1,
  JIVE2,
  IJIVE1,
  IJIVE2,
  UIJIVE1,
  UIJIVE2,
  TSJI1,
  TSJI2,
  UOJIVE1,
  UOJIVE2,
};

inline constexpr std::array<NamedEstimator, 14> kAllNamedEstimators = {
    NamedEstimator::OLS,     NamedEstimator::TSLS,    NamedEstimator::Nagar,   NamedEstimator::AUK,
    NamedEstimator::JIVE1,   NamedEstimator::JIVE2,   NamedEstimator::IJIVE1,  NamedEstimator::IJIVE2,
    NamedEstimator::UIJIVE1, NamedEstimator::UIJIVE2, NamedEstimator::TSJI1,   NamedEstimator::TSJI2,
    NamedEstimator::UOJIVE1, NamedEstimator::UOJIVE2,
};

constexpr std::string_view to_string(NamedEstimator name) {
  switch (name) {
    case NamedEstimator::OLS: return "OLS";
    case NamedEstimator::TSLS: return "TSLS";
    case NamedEstimator::Nagar: return "Nagar";
    case NamedEstimator::AUK: return "AUK";
    case NamedEstimator::JIVE1: return "JIVE1";
    case NamedEstimator::JIVE2: return "JIVE2";
    case NamedEstimator::IJIVE1: return "IJIVE1";
    case NamedEstimator::IJIVE2: return "IJIVE2";
    case NamedEstimator::UIJIVE1: return "UIJIVE1";
    case NamedEstimator::UIJIVE2: return "UIJIVE2";
    case NamedEstimator::TSJI1: return "TSJI1";
    case NamedEstimator::TSJI2: return "TSJI2";
    case NamedEstimator::UOJIVE1: return "UOJIVE1";
    case NamedEstimator::UOJIVE2: return "UOJIVE2";
  }
  return "?";
}

/// Case-insensitive lookup of an estimator name.
inline std::optional<NamedEstimator> parse_named(std::string_view text) {
  auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
  for (NamedEstimator name : kAllNamedEstimators) {
    std::string_view s = to_string(name);
    if (s.size() != text.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < s.size() && same; ++i) same = lower(s[i]) == lower(text[i]);
    if (same) return name;
  }
  return std::nullopt;
}

constexpr bool is_partialled_name(NamedEstimator name) {
  return name == NamedEstimator::IJIVE1 || name == NamedEstimator::IJIVE2 || name == NamedEstimator::UIJIVE1 ||
         name == NamedEstimator::UIJIVE2;
}

/// Maps a named estimator to its (family, parameter, mode) triple.
///
/// `k_total` and `l_total` are the stacked column counts K = K1 + L2 and
/// L = L1 + L2; `l1` is the number of endogenous regressors. Partialled
/// names on data without controls resolve to their raw-mode sibling and set
/// `note`.
template <typename Scalar = double>
EstimatorSpec<Scalar> resolve_named(NamedEstimator name, Index n, Index k_total, Index l_total, Index l1) {
  if (n <= 0 || k_total <= 0 || l_total <= 0 || l1 <= 0) throw DimensionError("dimensions must be positive");
  if (n <= k_total) throw DimensionError("resolve_named requires N > K");
  if (l1 > l_total) throw DimensionError("L1 exceeds L");
  const Scalar N = static_cast<Scalar>(n);
  const Scalar K = static_cast<Scalar>(k_total);
  const Scalar L = static_cast<Scalar>(l_total);
  const Scalar L1 = static_cast<Scalar>(l1);
  const bool has_controls = l_total > l1;

  EstimatorSpec<Scalar> spec;
  spec.label = std::string(to_string(name));
  switch (name) {
    case NamedEstimator::OLS: spec.family = KClass<Scalar>{Scalar(0)}; break;
    case NamedEstimator::TSLS: spec.family = KClass<Scalar>{Scalar(1)}; break;
    case NamedEstimator::Nagar: spec.family = KClass<Scalar>{Scalar(1) + (K - L - 1) / N}; break;
    case NamedEstimator::AUK: spec.family = KClass<Scalar>{(N - L - 1) / (N - K)}; break;
    case NamedEstimator::TSJI1: spec.family = Lambda1<Scalar>{(K - L - 1) / K}; break;
    case NamedEstimator::TSJI2: spec.family = Lambda2<Scalar>{(K - L - 1) / K}; break;
    case NamedEstimator::JIVE1: spec.family = Omega1<Scalar>{Scalar(0)}; break;
    case NamedEstimator::JIVE2: spec.family = Omega2<Scalar>{Scalar(0)}; break;
    case NamedEstimator::UOJIVE1: spec.family = Omega1<Scalar>{(L + 1) / N}; break;
    case NamedEstimator::UOJIVE2: spec.family = Omega2<Scalar>{(L + 1) / N}; break;
    case NamedEstimator::IJIVE1:
    case NamedEstimator::IJIVE2:
    case NamedEstimator::UIJIVE1:
    case NamedEstimator::UIJIVE2: {
      const bool unbiased = name == NamedEstimator::UIJIVE1 || name == NamedEstimator::UIJIVE2;
      const bool rowwise = name == NamedEstimator::IJIVE1 || name == NamedEstimator::UIJIVE1;
      const Scalar omega = unbiased ? (L1 + 1) / N : Scalar(0);
      if (rowwise)
        spec.family = Omega1<Scalar>{omega};
      else
        spec.family = Omega2<Scalar>{omega};
      if (has_controls) {
        spec.input_mode = InputMode::Partialled;
      } else {
        // Without controls, partialling is a no-op and L1 = L.
        NamedEstimator sibling = unbiased ? (rowwise ? NamedEstimator::UOJIVE1 : NamedEstimator::UOJIVE2)
                                          : (rowwise ? NamedEstimator::JIVE1 : NamedEstimator::JIVE2);
        spec.note = std::string(to_string(name)) + " resolves to " + std::string(to_string(sibling)) +
                    " (no controls to partial out)";
      }
      break;
    }
  }
  return spec;
}

namespace detail {

template <typename Scalar>
void check_weights(const Vector<Scalar>& weights) {
  for (Index i = 0; i < weights.size(); ++i)
    if (!(weights[i] > Scalar(0))) throw SingularWeightError(i, static_cast<double>(weights[i]));
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace detail

/// Row divisors of the rowwise-division families (1 - lambda D_i or
/// 1 - D_i + omega); empty for families without a division.
template <typename Scalar>
std::optional<Vector<Scalar>> row_divisors(const EstimatorFamily<Scalar>& family, const Vector<Scalar>& leverages) {
  return std::visit(
      detail::Overloaded{
          [&](const Lambda1<Scalar>& f) -> std::optional<Vector<Scalar>> {
            Vector<Scalar> d = (Scalar(1) - f.lambda * leverages.array()).matrix();
            detail::check_weights(d);
            return d;
          },
          [&](const Omega1<Scalar>& f) -> std::optional<Vector<Scalar>> {
            Vector<Scalar> d = (Scalar(1) + f.omega - leverages.array()).matrix();
            detail::check_weights(d);
            return d;
          },
          [](const auto&) -> std::optional<Vector<Scalar>> { return std::nullopt; },
      },
      family);
}

namespace detail {

// S m where S = P_Z - a D + b I, the symmetric core shared by every family.
template <typename Scalar, typename Derived>
Matrix<Scalar> symmetric_core(const ProjectionDecomposition<Scalar>& decomp, const Eigen::MatrixBase<Derived>& m,
                              Scalar a, Scalar b) {
  Matrix<Scalar> out = decomp.project(m);
  const auto& lev = decomp.leverages();
  if (a != Scalar(0) || b != Scalar(0))
    out.array() += ((b - a * lev.array()).matrix().asDiagonal() * m).array();
  return out;
}

// Every family is C = R^{-1} S with R diagonal (identity when absent) and S
// symmetric, so C m = R^{-1} (S m) and C' m = S (R^{-1} m).
template <typename Scalar>
std::pair<Scalar, Scalar> core_coefficients(const EstimatorFamily<Scalar>& family) {
  return std::visit(
      Overloaded{
          [](const KClass<Scalar>& f) { return std::pair<Scalar, Scalar>(Scalar(0), Scalar(1) - f.k); },
          [](const Lambda1<Scalar>& f) { return std::pair<Scalar, Scalar>(f.lambda, Scalar(0)); },
          [](const Lambda2<Scalar>& f) { return std::pair<Scalar, Scalar>(f.lambda, Scalar(0)); },
          [](const Omega1<Scalar>& f) { return std::pair<Scalar, Scalar>(Scalar(1), f.omega); },
          [](const Omega2<Scalar>& f) { return std::pair<Scalar, Scalar>(Scalar(1), f.omega); },
      },
      family);
}

template <typename Scalar>
Scalar projection_weight(const EstimatorFamily<Scalar>& family) {
  if (const auto* f = std::get_if<KClass<Scalar>>(&family)) return f->k;
  return Scalar(1);
}

template <typename Scalar, typename Derived>
Matrix<Scalar> weighted_core(const EstimatorFamily<Scalar>& family, const ProjectionDecomposition<Scalar>& decomp,
                             const Eigen::MatrixBase<Derived>& m) {
  const auto [a, b] = core_coefficients(family);
  const Scalar p = projection_weight(family);
  if (p == Scalar(1)) return symmetric_core(decomp, m, a, b);
  if (p == Scalar(0)) return m;
  // k-class: (1-k) m + k P m
  Matrix<Scalar> out = p * decomp.project(m);
  out += b * m;
  return out;
}

}  // namespace detail

/// C' m.
template <typename Scalar, typename Derived>
Matrix<Scalar> apply_c(const EstimatorFamily<Scalar>& family, const ProjectionDecomposition<Scalar>& decomp,
                       const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() != decomp.n()) throw DimensionError("apply_c: row count does not match the decomposition");
  const auto divisors = row_divisors(family, decomp.leverages());
  if (!divisors) return detail::weighted_core(family, decomp, m);
  Matrix<Scalar> scaled = divisors->cwiseInverse().asDiagonal() * m;
  return detail::weighted_core(family, decomp, scaled);
}

/// C m.
template <typename Scalar, typename Derived>
Matrix<Scalar> apply_c_forward(const EstimatorFamily<Scalar>& family, const ProjectionDecomposition<Scalar>& decomp,
                               const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() != decomp.n()) throw DimensionError("apply_c_forward: row count does not match the decomposition");
  const auto divisors = row_divisors(family, decomp.leverages());
  Matrix<Scalar> core = detail::weighted_core(family, decomp, m);
  if (divisors) core = divisors->cwiseInverse().asDiagonal() * core;
  return core;
}

/// Second-stage inputs for one input mode, with the projection computed once
/// and shared by every spec evaluated on the same data.
template <typename Scalar = double>
struct PreparedDesign {
  Matrix<Scalar> x;
  Vector<Scalar> y;
  ProjectionDecomposition<Scalar> decomp;
  InputMode mode = InputMode::Raw;
  Index n() const noexcept { return y.size(); }
  Index l() const noexcept { return x.cols(); }
  Index k() const noexcept { return decomp.rank(); }
};

template <typename Scalar>
PreparedDesign<Scalar> prepare(const DesignData<Scalar>& data, InputMode mode = InputMode::Raw) {
  if (mode == InputMode::Partialled) {
    if (data.l2() < 1) throw DimensionError("partialled mode requires at least one control column");
    PreparedDesign<Scalar> p = prepare(partial_out(data).as_design(), InputMode::Raw);
    p.mode = InputMode::Partialled;
    return p;
  }
  StackedDesign<Scalar> s = stack(data);
  auto decomp = project(s.z);
  return PreparedDesign<Scalar>{std::move(s.x), data.y(), std::move(decomp), InputMode::Raw};
}

enum class VarianceDivisor { N, NMinusL };

template <typename Scalar = double>
struct EstimateOptions {
  VarianceDivisor divisor = VarianceDivisor::N;
  Scalar max_cond = Scalar(1e12);
};

template <typename Scalar = double>
struct EstimateResult {
  Vector<Scalar> beta_hat;
  Vector<Scalar> se;
  Scalar sigma2_hat = 0;
  Scalar cond = 1;
  Index n_used = 0;
};

namespace detail {

template <typename Scalar>
Scalar condition_number(const Matrix<Scalar>& a) {
  Eigen::JacobiSVD<Matrix<Scalar>> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return Scalar(1);
  const Scalar smin = s[s.size() - 1];
  if (!(smin > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
  return std::max(Scalar(1), s[0] / smin);
}

// Solves a b = rhs for a small square system with one step of iterative
// refinement. Throws NearSingularError when cond(a) exceeds the limit.
template <typename Scalar>
class SmallSolver {
 public:
  SmallSolver(const Matrix<Scalar>& a, Scalar max_cond) : a_(a), cond_(condition_number(a)), qr_(a) {
    if (!(cond_ <= max_cond)) throw NearSingularError(static_cast<double>(cond_));
  }

  Vector<Scalar> solve(const Vector<Scalar>& rhs) const {
    Vector<Scalar> x = qr_.solve(rhs);
    Vector<Scalar> r = rhs - a_ * x;
    x += qr_.solve(r);
    return x;
  }

  Matrix<Scalar> inverse() const { return qr_.inverse(); }
  Scalar cond() const noexcept { return cond_; }

 private:
  Matrix<Scalar> a_;
  Scalar cond_;
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr_;
};

template <typename Scalar>
Vector<Scalar> sandwich_se(const SmallSolver<Scalar>& solver, const Matrix<Scalar>& instrument, Scalar sigma2) {
  const Matrix<Scalar> a_inv = solver.inverse();
  const Matrix<Scalar> meat = instrument.transpose() * instrument;
  const Matrix<Scalar> v = sigma2 * (a_inv * meat * a_inv.transpose());
  return v.diagonal().cwiseMax(Scalar(0)).cwiseSqrt();
}

}  // namespace detail

/// Homoskedastic just-identified-IV standard errors with instrument C X:
/// sqrt(diag(sigma2 (X'C'X)^{-1} (X'C'C X) (X'C'X)^{-T})).
template <typename Scalar>
Vector<Scalar> standard_errors(const EstimatorSpec<Scalar>& spec, const PreparedDesign<Scalar>& prepared,
                               Scalar sigma2_hat, const EstimateOptions<Scalar>& options = {}) {
  const Matrix<Scalar> h = apply_c_forward(spec.family, prepared.decomp, prepared.x);
  const Matrix<Scalar> a = h.transpose() * prepared.x;
  detail::SmallSolver<Scalar> solver(a, options.max_cond);
  return detail::sandwich_se(solver, h, sigma2_hat);
}

template <typename Scalar>
EstimateResult<Scalar> estimate(const EstimatorSpec<Scalar>& spec, const PreparedDesign<Scalar>& prepared,
                                const EstimateOptions<Scalar>& options = {}) {
  if (spec.input_mode != prepared.mode) throw ConfigError("estimator '" + spec.label + "' needs a different input mode");
  const Index n = prepared.n();
  const Index l = prepared.l();

  // H = C X is the just-identified instrument: X'C'X = H'X, X'C'y = H'y.
  const Matrix<Scalar> h = apply_c_forward(spec.family, prepared.decomp, prepared.x);
  const Matrix<Scalar> a = h.transpose() * prepared.x;
  const Vector<Scalar> b = h.transpose() * prepared.y;
  detail::SmallSolver<Scalar> solver(a, options.max_cond);

  EstimateResult<Scalar> out;
  out.beta_hat = solver.solve(b);
  const Vector<Scalar> resid = prepared.y - prepared.x * out.beta_hat;
  const Scalar divisor = options.divisor == VarianceDivisor::N ? static_cast<Scalar>(n) : static_cast<Scalar>(n - l);
  if (!(divisor > Scalar(0))) throw DimensionError("variance divisor must be positive");
  out.sigma2_hat = resid.squaredNorm() / divisor;
  out.se = detail::sandwich_se(solver, h, out.sigma2_hat);
  out.cond = solver.cond();
  out.n_used = n;
  return out;
}

template <typename Scalar>
EstimateResult<Scalar> estimate(const EstimatorSpec<Scalar>& spec, const DesignData<Scalar>& data,
                                const EstimateOptions<Scalar>& options = {}) {
  return estimate(spec, prepare(data, spec.input_mode), options);
}

/// Brute-force JIVE1: each first-stage fitted row comes from a literal
/// leave-one-out regression of X on Z, then beta = (Xhat'X)^{-1} Xhat'y.
/// Quadratic in N; for checking the closed form only.
template <typename Scalar>
Vector<Scalar> jive1_loo_oracle(const DesignData<Scalar>& data, Scalar max_cond = Scalar(1e12)) {
  const StackedDesign<Scalar> s = stack(data);
  const Index n = data.n();
  const Index k = s.k;
  Matrix<Scalar> x_hat(n, s.l);
  Matrix<Scalar> z_minus(n - 1, k);
  Matrix<Scalar> x_minus(n - 1, s.l);
  for (Index i = 0; i < n; ++i) {
    z_minus.topRows(i) = s.z.topRows(i);
    z_minus.bottomRows(n - 1 - i) = s.z.bottomRows(n - 1 - i);
    x_minus.topRows(i) = s.x.topRows(i);
    x_minus.bottomRows(n - 1 - i) = s.x.bottomRows(n - 1 - i);
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(n - 1, k);
    qr.setThreshold(rank_threshold<Scalar>(n - 1, k));
    qr.compute(z_minus);
    if (qr.rank() < k)
      throw OracleInfeasibleError("leave-one-out instrument matrix loses rank when row " + std::to_string(i) +
                                  " is removed");
    const Matrix<Scalar> pi_hat = qr.solve(x_minus);
    x_hat.row(i) = s.z.row(i) * pi_hat;
  }
  const Matrix<Scalar> a = x_hat.transpose() * s.x;
  detail::SmallSolver<Scalar> solver(a, max_cond);
  return solver.solve(x_hat.transpose() * data.y());
}

}  // namespace ivc
