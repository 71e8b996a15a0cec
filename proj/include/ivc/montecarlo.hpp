#pragma once

// Monte Carlo harness: the three simulation designs (homoskedastic many
// instruments, heteroskedastic group fixed effects, high-leverage outlier)
// and a seeded replication engine reporting bias / variance / MSE.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ivc/design.hpp"
#include "ivc/estimators.hpp"
#include "ivc/rng.hpp"

namespace ivc::mc {

/// Gaussian instruments and controls; K1 = k_total - l_total instruments and
/// l_total delta-loaded controls, plus an intercept with zero loading that is
/// carried as the first control column.
struct Homoskedastic {
  Index n = 500;
  Index k_total = 50;
  Index l_total = 10;
  double beta_star = 0.3;
  double gamma_star = 1.0;
  double pi_star = 0.08;
  double delta_star = 0.05;
};

/// N = 500 in 20 groups (two of 115, eighteen of 15). Instruments are the
/// dummies of groups 2..20; the intercept is the only control. Errors are
/// group-heteroskedastic: setup 1 gives the small groups the "+" covariance
/// and the big groups the "-" covariance, setup 2 the reverse.
struct GroupHet {
  int setup = 1;
  /// Swap the covariance assignment (big groups get "+" in setup 1).
  bool flip = false;
};

/// Five group-dummy instruments over blocks of sqrt(N-1) rows, with a
/// contaminated first row whose structural error is scaled by N^(1/3).
struct Outlier {
  Index n = 101;
  bool add_intercept = false;
};

using DesignVariant = std::variant<Homoskedastic, GroupHet, Outlier>;

inline constexpr double kGroupBetaStar = 0.3;
inline constexpr double kGroupPiStar = 0.3;
inline constexpr double kOutlierBetaStar = 0.3;
inline constexpr double kOutlierPiStar = 1.0;

/// "+" and "-" group covariance matrices of (epsilon, eta).
Eigen::Matrix2d group_plus_cov();
Eigen::Matrix2d group_minus_cov();
/// Base (epsilon, eta) covariance of the homoskedastic and outlier designs.
Eigen::Matrix2d base_error_cov();

class SimDesign {
 public:
  SimDesign(DesignVariant variant, Eigen::Matrix2d error_cov);

  static SimDesign many_instruments(int setup);
  static SimDesign group_het(int setup, bool flip = false);
  static SimDesign outlier(Index n, bool add_intercept = false);

  const DesignVariant& variant() const noexcept { return variant_; }
  const Eigen::Matrix2d& error_cov() const noexcept { return error_cov_; }

  std::string name() const;
  /// The estimator set reported for this design.
  std::vector<NamedEstimator> default_estimators() const;

 private:
  DesignVariant variant_;
  Eigen::Matrix2d error_cov_;
};

struct RoundDraw {
  DesignData<double> data;
  Vector<double> beta_true;
  /// Realized concentration ||first-stage signal||^2 / sigma_eta^2.
  double r0 = 0.0;
};

RoundDraw generate(const SimDesign& design, RngStream& rng);

struct Moments {
  double bias = 0.0;
  double variance = 0.0;
  double mse = 0.0;
};

/// bias = |mean - beta_true|, variance with divisor R, mse = mean squared error.
Moments summarize(std::span<const double> estimates, double beta_true);

struct EstimatorSummary {
  std::string label;
  double bias = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  std::size_t failures = 0;
  std::size_t successes = 0;
  /// Mean of se^2 for the first coefficient over successful rounds.
  double mean_se_sq = 0.0;
  std::string note;
  /// Per-round first-coefficient estimates, NaN for failed rounds.
  std::optional<std::vector<double>> estimates;
};

struct MonteCarloSummary {
  std::string design;
  std::size_t rounds = 0;
  std::uint64_t seed = 0;
  double beta_true = 0.0;
  double mean_r0 = 0.0;
  std::vector<EstimatorSummary> rows;

  const EstimatorSummary& at(std::string_view label) const;
};

struct RunOptions {
  bool keep_estimates = false;
  /// 0 selects default_thread_count().
  std::size_t threads = 0;
  EstimateOptions<double> estimate;
};

/// Number of worker threads: $IVC_THREADS when set, else the hardware count.
std::size_t default_thread_count();

MonteCarloSummary run(const SimDesign& design, std::span<const NamedEstimator> names, std::size_t rounds,
                      std::uint64_t base_seed, const RunOptions& options = {});

struct DensityTable {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;  // [estimator][bin]
};

/// Equal-width histogram over the pooled range of all kept estimates.
DensityTable density_export(const MonteCarloSummary& summary, std::size_t bins);

}  // namespace ivc::mc
