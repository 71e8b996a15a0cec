#pragma once

// Approximate-bias coefficients tr(C) - L_eff - 1. The coefficient is the
// dimensionless factor the approximate bias is proportional to; an estimator
// is approximately unbiased when it is zero and asymptotically vanishing when
// it tends to zero with N.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "ivc/design.hpp"
#include "ivc/estimators.hpp"

namespace ivc {

template <typename Scalar = double>
struct BiasCoefficient {
  Scalar value = 0;
  Scalar trace_c = 0;
  Index l_effective = 0;
};

/// tr(C) of `family` given the leverages of a rank-K instrument space.
/// K is taken as the rounded leverage sum.
template <typename Scalar>
Scalar trace_c(const EstimatorFamily<Scalar>& family, const Vector<Scalar>& leverages) {
  const Scalar n = static_cast<Scalar>(leverages.size());
  const Scalar k = std::round(leverages.sum());
  return std::visit(
      detail::Overloaded{
          [&](const KClass<Scalar>& f) { return f.k * k + (Scalar(1) - f.k) * n; },
          [&](const Lambda1<Scalar>& f) {
            const Vector<Scalar> d = *row_divisors(family, leverages);
            return (Scalar(1) - f.lambda) * (leverages.array() / d.array()).sum();
          },
          [&](const Lambda2<Scalar>& f) { return k - f.lambda * k; },
          [&](const Omega1<Scalar>& f) {
            const Vector<Scalar> d = *row_divisors(family, leverages);
            return (f.omega / d.array()).sum();
          },
          [&](const Omega2<Scalar>& f) { return n * f.omega; },
      },
      family);
}

template <typename Scalar>
BiasCoefficient<Scalar> bias_coefficient(const EstimatorFamily<Scalar>& family, const Vector<Scalar>& leverages,
                                         Index n, Index l_effective) {
  if (leverages.size() != n) throw DimensionError("bias_coefficient: leverage vector length differs from N");
  BiasCoefficient<Scalar> c;
  c.trace_c = trace_c(family, leverages);
  c.l_effective = l_effective;
  c.value = c.trace_c - static_cast<Scalar>(l_effective) - Scalar(1);
  return c;
}

inline constexpr double kExactUnbiasedTol = 1e-9;
inline constexpr double kVanishingTol = 0.5;

template <typename Scalar>
bool is_approximately_unbiased(const BiasCoefficient<Scalar>& coef, Scalar tol = Scalar(kExactUnbiasedTol)) {
  return std::abs(coef.value) <= tol;
}

/// Coefficient of a named estimator on one design, using the leverages of
/// the instrument space its input mode sees (D for raw, D-tilde for
/// partialled) and L_eff = L or L1 accordingly.
template <typename Scalar>
BiasCoefficient<Scalar> named_bias_coefficient(NamedEstimator name, const DesignData<Scalar>& data) {
  const EstimatorSpec<Scalar> spec = resolve_named<Scalar>(name, data.n(), data.k(), data.l(), data.l1());
  const PreparedDesign<Scalar> prepared = prepare(data, spec.input_mode);
  return bias_coefficient(spec.family, prepared.decomp.leverages(), data.n(), prepared.l());
}

template <typename Scalar>
std::vector<std::pair<Index, BiasCoefficient<Scalar>>> vanishing_probe(NamedEstimator name,
                                                                         std::span<const DesignData<Scalar>> designs) {
  std::vector<std::pair<Index, BiasCoefficient<Scalar>>> path;
  path.reserve(designs.size());
  Index last_n = 0;
  for (const auto& d : designs) {
    if (d.n() <= last_n) throw ConfigError("vanishing_probe needs designs of strictly increasing N");
    last_n = d.n();
    path.emplace_back(d.n(), named_bias_coefficient(name, d));
  }
  return path;
}

/// Upper bound on |tr(C) - L1 - 1| for UIJIVE1-type omega1 estimators with
/// omega = (L1+1)/N: (K1 (L1+1) + (L1+1)^2) / (m N + L1 + 1), m = 1 - max D_i.
template <typename Scalar>
Scalar omega1_vanishing_bound(Index n, Index k1, Index l1, Scalar max_leverage) {
  const Scalar m = Scalar(1) - max_leverage;
  const Scalar a = static_cast<Scalar>(l1 + 1);
  return (static_cast<Scalar>(k1) * a + a * a) / (m * static_cast<Scalar>(n) + a);
}

}  // namespace ivc
