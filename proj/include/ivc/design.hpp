#pragma once

// Data model for the single-equation IV setup plus the projection primitives
// every estimator is built from. P_Z is never formed as an N x N array: the
// projection is carried as a thin orthonormal basis of col(Z) together with
// the diagonal of P_Z (the leverages).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "ivc/errors.hpp"

namespace ivc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// Raw observation bundle: outcome y, endogenous X*, controls W, excluded
/// instruments Z*. The intercept, when present, is the first column of W.
template <typename Scalar = double>
class DesignData {
 public:
  DesignData(Vector<Scalar> y, Matrix<Scalar> x_star, Matrix<Scalar> w, Matrix<Scalar> z_star)
      : y_(std::move(y)), x_star_(std::move(x_star)), w_(std::move(w)), z_star_(std::move(z_star)) {
    const Index n = y_.size();
    if (x_star_.rows() != n) throw DimensionError("endogenous block X* has " + std::to_string(x_star_.rows()) + " rows, expected " + std::to_string(n));
    if (w_.rows() != n && !(w_.cols() == 0)) throw DimensionError("control block W has " + std::to_string(w_.rows()) + " rows, expected " + std::to_string(n));
    if (z_star_.rows() != n) throw DimensionError("instrument block Z* has " + std::to_string(z_star_.rows()) + " rows, expected " + std::to_string(n));
    if (w_.cols() == 0) w_.resize(n, 0);
    if (x_star_.cols() < 1) throw DimensionError("endogenous block X* must have at least one column");
    if (z_star_.cols() < x_star_.cols())
      throw DimensionError("instrument block Z* has fewer columns than X* (K1 < L1)");
    if (n <= z_star_.cols() + w_.cols())
      throw DimensionError("need more observations than first-stage regressors (N > K1 + L2)");
    if (!y_.allFinite()) throw DimensionError("outcome y has non-finite entries");
    if (!x_star_.allFinite()) throw DimensionError("endogenous block X* has non-finite entries");
    if (!w_.allFinite()) throw DimensionError("control block W has non-finite entries");
    if (!z_star_.allFinite()) throw DimensionError("instrument block Z* has non-finite entries");
  }

  const Vector<Scalar>& y() const noexcept { return y_; }
  const Matrix<Scalar>& x_star() const noexcept { return x_star_; }
  const Matrix<Scalar>& w() const noexcept { return w_; }
  const Matrix<Scalar>& z_star() const noexcept { return z_star_; }

  Index n() const noexcept { return y_.size(); }
  Index l1() const noexcept { return x_star_.cols(); }
  Index l2() const noexcept { return w_.cols(); }
  Index k1() const noexcept { return z_star_.cols(); }
  Index l() const noexcept { return l1() + l2(); }
  Index k() const noexcept { return k1() + l2(); }

 private:
  Vector<Scalar> y_;
  Matrix<Scalar> x_star_;
  Matrix<Scalar> w_;
  Matrix<Scalar> z_star_;
};

/// X = [X* W], Z = [Z* W].
template <typename Scalar = double>
struct StackedDesign {
  Matrix<Scalar> x;
  Matrix<Scalar> z;
  Index l = 0;
  Index k = 0;
};

template <typename Scalar>
StackedDesign<Scalar> stack(const DesignData<Scalar>& data) {
  const Index n = data.n();
  StackedDesign<Scalar> out;
  out.l = data.l1() + data.l2();
  out.k = data.k1() + data.l2();
  out.x.resize(n, out.l);
  out.x << data.x_star(), data.w();
  out.z.resize(n, out.k);
  out.z << data.z_star(), data.w();
  return out;
}

/// Orthonormal basis of col(Z) and the per-row leverages D_i = diag(P_Z).
template <typename Scalar = double>
class ProjectionDecomposition {
 public:
  ProjectionDecomposition(Matrix<Scalar> basis, Index rank)
      : basis_(std::move(basis)), rank_(rank), leverages_(basis_.rowwise().squaredNorm()) {}

  const Matrix<Scalar>& basis() const noexcept { return basis_; }
  Index rank() const noexcept { return rank_; }
  const Vector<Scalar>& leverages() const noexcept { return leverages_; }
  Index n() const noexcept { return basis_.rows(); }

  /// P_Z m, computed as basis (basis' m).
  template <typename Derived>
  Matrix<Scalar> project(const Eigen::MatrixBase<Derived>& m) const {
    return basis_ * (basis_.transpose() * m);
  }

  /// (I - P_Z) m.
  template <typename Derived>
  Matrix<Scalar> annihilate(const Eigen::MatrixBase<Derived>& m) const {
    return m - project(m);
  }

 private:
  Matrix<Scalar> basis_;
  Index rank_;
  Vector<Scalar> leverages_;
};

enum class RankPolicy {
  Strict,         ///< throw RankDeficiencyError when rank < K
  AllowReduced,   ///< continue with the basis of the detected column space
};

/// Relative pivot threshold used for the numerical rank: max(N, K) * eps.
/// Eigen compares |r_jj| against threshold * max pivot, and the leading pivot
/// of a column-pivoted QR is the largest column norm.
template <typename Scalar>
Scalar rank_threshold(Index n, Index k) {
  return static_cast<Scalar>(std::max(n, k)) * std::numeric_limits<Scalar>::epsilon();
}

template <typename Scalar>
ProjectionDecomposition<Scalar> project(const Matrix<Scalar>& z, RankPolicy policy = RankPolicy::Strict) {
  const Index n = z.rows();
  const Index k = z.cols();
  if (n < k) throw DimensionError("projection needs N >= K");
  if (k == 0) return ProjectionDecomposition<Scalar>(Matrix<Scalar>(n, 0), 0);

  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(n, k);
  qr.setThreshold(rank_threshold<Scalar>(n, k));
  qr.compute(z);
  Index rank = qr.rank();
  if (qr.maxPivot() == Scalar(0)) rank = 0;
  if (rank < k && policy == RankPolicy::Strict)
    throw RankDeficiencyError("instrument matrix is rank-deficient", rank, k);

  Matrix<Scalar> basis = qr.householderQ() * Matrix<Scalar>::Identity(n, rank);
  return ProjectionDecomposition<Scalar>(std::move(basis), rank);
}

/// y, X*, Z* with the controls W partialled out.
template <typename Scalar = double>
struct PartialledData {
  Vector<Scalar> y_t;
  Matrix<Scalar> x_t;
  Matrix<Scalar> z_t;
  Index n = 0;
  Index l1 = 0;
  Index k1 = 0;

  /// The partialled variables as a control-free design (W has no columns).
  DesignData<Scalar> as_design() const { return DesignData<Scalar>(y_t, x_t, Matrix<Scalar>(n, 0), z_t); }
};

template <typename Scalar>
PartialledData<Scalar> partial_out(const DesignData<Scalar>& data) {
  if (data.l2() < 1) throw DimensionError("partialling out requires at least one control column");
  ProjectionDecomposition<Scalar> wdec = [&] {
    try {
      return project(data.w());
    } catch (const RankDeficiencyError& e) {
      throw RankDeficiencyError("control matrix W is rank-deficient", e.rank(), e.expected_rank());
    }
  }();
  PartialledData<Scalar> out;
  out.y_t = wdec.annihilate(data.y());
  out.x_t = wdec.annihilate(data.x_star());
  out.z_t = wdec.annihilate(data.z_star());
  out.n = data.n();
  out.l1 = data.l1();
  out.k1 = data.k1();
  return out;
}

/// Leverage diagnostic: how close the largest leverage comes to 1.
template <typename Scalar = double>
struct LeverageReport {
  Scalar max_leverage = 0;
  Index max_index = 0;  // zero-based row
  Scalar margin = 1;
  bool ba_flag = false;
};

inline constexpr double kDefaultBaThreshold = 0.05;

template <typename Scalar>
LeverageReport<Scalar> leverage_report(const ProjectionDecomposition<Scalar>& decomp,
                                       Scalar threshold = Scalar(kDefaultBaThreshold)) {
  LeverageReport<Scalar> r;
  if (decomp.n() == 0) return r;
  Index idx = 0;
  r.max_leverage = decomp.leverages().maxCoeff(&idx);
  r.max_index = idx;
  r.margin = Scalar(1) - r.max_leverage;
  r.ba_flag = r.margin < threshold;
  return r;
}

}  // namespace ivc
