#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "ivc/design.hpp"
#include "ivc/rng.hpp"

namespace ivc::test {

inline Matrix<double> gaussian(RngStream& rng, Index rows, Index cols) {
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

/// Random overidentified design: intercept plus (l2 - 1) Gaussian controls,
/// endogenous columns loaded on every instrument and correlated with the
/// structural error.
inline DesignData<double> random_design(std::uint64_t seed, Index n, Index k1, Index l1, Index l2) {
  RngStream rng(seed, 0);
  Matrix<double> z = gaussian(rng, n, k1);
  Matrix<double> w(n, l2);
  if (l2 > 0) {
    w.col(0).setOnes();
    if (l2 > 1) w.rightCols(l2 - 1) = gaussian(rng, n, l2 - 1);
  }
  Matrix<double> eta = gaussian(rng, n, l1);
  Vector<double> eps = gaussian(rng, n, 1).col(0) + 0.5 * eta.col(0);
  Matrix<double> x = z * Matrix<double>::Constant(k1, l1, 0.4) + eta;
  if (l2 > 0) x += w * Matrix<double>::Constant(l2, l1, 0.2);
  Vector<double> y = x * Vector<double>::Constant(l1, 0.3) + eps;
  if (l2 > 0) y += w * Vector<double>::Constant(l2, 1.0);
  return DesignData<double>(y, x, w, z);
}

/// Dense P_Z = Z (Z'Z)^{-1} Z' for small oracle checks.
inline Matrix<double> dense_projector(const Matrix<double>& z) {
  return z * (z.transpose() * z).ldlt().solve(z.transpose());
}

/// Five-group instrument matrix with a contaminated first row: row 0 carries
/// (N-1)^{1/3} in the first column, then blocks of sqrt(N-1) rows cycle
/// through groups 1..5 and an all-zero group.
inline Matrix<double> outlier_instruments(Index n) {
  const Index block = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(n - 1))));
  Matrix<double> z = Matrix<double>::Zero(n, 5);
  z(0, 0) = std::cbrt(static_cast<double>(n - 1));
  for (Index i = 1; i < n; ++i) {
    const Index j = (i - 1) % block;
    if (j < 5) z(i, j) = 1.0;
  }
  return z;
}

}  // namespace ivc::test
