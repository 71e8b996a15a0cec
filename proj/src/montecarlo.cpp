#include "ivc/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ivc::mc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_spd(const Eigen::Matrix2d& m) {
  if (!m.allFinite() || std::abs(m(0, 1) - m(1, 0)) > 1e-14) return false;
  return m(0, 0) > 0.0 && m.determinant() > 0.0;
}

struct ErrorDraw {
  double eps;
  double eta;
};

ErrorDraw draw_errors(const Eigen::Matrix2d& cov, RngStream& rng) {
  const double u1 = rng.normal();
  const double u2 = rng.normal();
  const double l11 = std::sqrt(cov(0, 0));
  const double l21 = cov(1, 0) / l11;
  const double l22 = std::sqrt(cov(1, 1) - l21 * l21);
  return {l11 * u1, l21 * u1 + l22 * u2};
}

Index outlier_block(Index n) {
  const auto s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n - 1))));
  return s * s == n - 1 ? s : 0;
}

constexpr std::array<Index, 20> group_sizes() {
  std::array<Index, 20> sizes{};
  sizes[0] = 115;
  sizes[1] = 115;
  for (std::size_t g = 2; g < sizes.size(); ++g) sizes[g] = 15;
  return sizes;
}

RoundDraw generate_homoskedastic(const Homoskedastic& d, const Eigen::Matrix2d& cov, RngStream& rng) {
  const Index n = d.n;
  const Index k1 = d.k_total - d.l_total;
  const Index lc = d.l_total;
  Matrix<double> z(n, k1);
  Matrix<double> w(n, lc + 1);
  Matrix<double> x(n, 1);
  Vector<double> y(n);
  double signal_ss = 0.0;
  for (Index i = 0; i < n; ++i) {
    w(i, 0) = 1.0;
    double zsum = 0.0;
    for (Index j = 0; j < k1; ++j) {
      z(i, j) = rng.normal();
      zsum += z(i, j);
    }
    double wsum = 0.0;
    for (Index j = 0; j < lc; ++j) {
      w(i, j + 1) = rng.normal();
      wsum += w(i, j + 1);
    }
    const ErrorDraw e = draw_errors(cov, rng);
    const double signal = d.pi_star * zsum + d.delta_star * wsum;
    signal_ss += signal * signal;
    x(i, 0) = signal + e.eta;
    y[i] = d.beta_star * x(i, 0) + d.gamma_star * wsum + e.eps;
  }
  Vector<double> beta(2 + lc);
  beta[0] = d.beta_star;
  beta[1] = 0.0;
  beta.tail(lc).setConstant(d.gamma_star);
  const double r0 = signal_ss / cov(1, 1);
  return RoundDraw{DesignData<double>(std::move(y), std::move(x), std::move(w), std::move(z)), std::move(beta), r0};
}

RoundDraw generate_group_het(const GroupHet& d, RngStream& rng) {
  constexpr auto sizes = group_sizes();
  Index n = 0;
  for (Index s : sizes) n += s;
  const Index groups = static_cast<Index>(sizes.size());
  const bool big_plus = (d.setup == 2) != d.flip;
  const Eigen::Matrix2d plus = group_plus_cov();
  const Eigen::Matrix2d minus = group_minus_cov();

  Matrix<double> z = Matrix<double>::Zero(n, groups - 1);
  Matrix<double> w = Matrix<double>::Ones(n, 1);
  Matrix<double> x(n, 1);
  Vector<double> y(n);
  double signal_ss = 0.0;
  Index row = 0;
  for (Index g = 0; g < groups; ++g) {
    const bool big = g < 2;
    const Eigen::Matrix2d& cov = (big == big_plus) ? plus : minus;
    for (Index r = 0; r < sizes[static_cast<std::size_t>(g)]; ++r, ++row) {
      if (g > 0) z(row, g - 1) = 1.0;
      const ErrorDraw e = draw_errors(cov, rng);
      const double signal = g > 0 ? kGroupPiStar : 0.0;
      signal_ss += signal * signal;
      x(row, 0) = signal + e.eta;
      y[row] = kGroupBetaStar * x(row, 0) + e.eps;
    }
  }
  Vector<double> beta(2);
  beta << kGroupBetaStar, 0.0;
  const double r0 = signal_ss / plus(1, 1);
  return RoundDraw{DesignData<double>(std::move(y), std::move(x), std::move(w), std::move(z)), std::move(beta), r0};
}

RoundDraw generate_outlier(const Outlier& d, const Eigen::Matrix2d& cov, RngStream& rng) {
  const Index n = d.n;
  const Index block = outlier_block(n);
  constexpr Index k1 = 5;
  Matrix<double> z = Matrix<double>::Zero(n, k1);
  z(0, 0) = std::cbrt(static_cast<double>(n - 1));
  for (Index i = 1; i < n; ++i) {
    const Index j = (i - 1) % block;
    if (j < k1) z(i, j) = 1.0;
  }
  Matrix<double> x(n, 1);
  Vector<double> y(n);
  const double eps_scale = std::cbrt(static_cast<double>(n));
  double signal_ss = 0.0;
  for (Index i = 0; i < n; ++i) {
    ErrorDraw e = draw_errors(cov, rng);
    if (i == 0) e.eps *= eps_scale;
    const double signal = kOutlierPiStar * z.row(i).sum();
    signal_ss += signal * signal;
    x(i, 0) = signal + e.eta;
    y[i] = kOutlierBetaStar * x(i, 0) + e.eps;
  }
  Matrix<double> w = d.add_intercept ? Matrix<double>::Ones(n, 1) : Matrix<double>(n, 0);
  Vector<double> beta(d.add_intercept ? 2 : 1);
  beta.setZero();
  beta[0] = kOutlierBetaStar;
  const double r0 = signal_ss / cov(1, 1);
  return RoundDraw{DesignData<double>(std::move(y), std::move(x), std::move(w), std::move(z)), std::move(beta), r0};
}

struct RoundResult {
  std::vector<double> estimate;
  std::vector<double> se_sq;
  double r0 = kNaN;
};

RoundResult evaluate_round(const SimDesign& design, std::span<const NamedEstimator> names, std::size_t round,
                           std::uint64_t seed, const EstimateOptions<double>& options) {
  RngStream rng(seed, round);
  const RoundDraw draw = generate(design, rng);
  const DesignData<double>& data = draw.data;

  RoundResult out;
  out.estimate.assign(names.size(), kNaN);
  out.se_sq.assign(names.size(), kNaN);
  out.r0 = draw.r0;

  std::optional<PreparedDesign<double>> raw;
  std::optional<PreparedDesign<double>> partialled;
  bool raw_failed = false;
  bool partialled_failed = false;
  for (std::size_t j = 0; j < names.size(); ++j) {
    try {
      const auto spec = resolve_named<double>(names[j], data.n(), data.k(), data.l(), data.l1());
      const bool want_partialled = spec.input_mode == InputMode::Partialled;
      auto& slot = want_partialled ? partialled : raw;
      bool& failed = want_partialled ? partialled_failed : raw_failed;
      if (failed) continue;
      if (!slot) {
        try {
          slot.emplace(prepare(data, spec.input_mode));
        } catch (const Error&) {
          failed = true;
          continue;
        }
      }
      const EstimateResult<double> r = estimate(spec, *slot, options);
      if (!std::isfinite(r.beta_hat[0])) continue;
      out.estimate[j] = r.beta_hat[0];
      out.se_sq[j] = r.se[0] * r.se[0];
    } catch (const Error&) {
      // recorded as a failure by the NaN entry
    }
  }
  return out;
}

}  // namespace

Eigen::Matrix2d group_plus_cov() {
  Eigen::Matrix2d m;
  m << 0.25, 0.2, 0.2, 0.25;
  return m;
}

Eigen::Matrix2d group_minus_cov() {
  Eigen::Matrix2d m;
  m << 0.25, -0.1, -0.1, 0.25;
  return m;
}

Eigen::Matrix2d base_error_cov() {
  Eigen::Matrix2d m;
  m << 0.8, -0.6, -0.6, 1.0;
  return m;
}

SimDesign::SimDesign(DesignVariant variant, Eigen::Matrix2d error_cov)
    : variant_(std::move(variant)), error_cov_(std::move(error_cov)) {
  if (!is_spd(error_cov_)) throw ConfigError("error covariance must be symmetric positive definite");
  std::visit(detail::Overloaded{
                 [](const Homoskedastic& d) {
                   if (d.k_total <= d.l_total) throw ConfigError("homoskedastic design needs K > L (K1 >= 1)");
                   if (d.l_total < 0) throw ConfigError("homoskedastic design needs L >= 0");
                   if (d.n <= d.k_total + 1) throw ConfigError("homoskedastic design needs N > K + 1");
                 },
                 [](const GroupHet& d) {
                   if (d.setup != 1 && d.setup != 2) throw ConfigError("group design setup must be 1 or 2");
                 },
                 [](const Outlier& d) {
                   if (d.n < 2 || outlier_block(d.n) < 5)
                     throw ConfigError("outlier design needs N - 1 to be a square of at least 25");
                 },
             },
             variant_);
}

SimDesign SimDesign::many_instruments(int setup) {
  if (setup == 1) return SimDesign(Homoskedastic{500, 50, 10, 0.3, 1.0, 0.08, 0.05}, base_error_cov());
  if (setup == 2) return SimDesign(Homoskedastic{2000, 200, 40, 0.3, 1.0, 0.02, 0.02}, base_error_cov());
  throw ConfigError("many-instrument setup must be 1 or 2");
}

SimDesign SimDesign::group_het(int setup, bool flip) { return SimDesign(GroupHet{setup, flip}, group_plus_cov()); }

SimDesign SimDesign::outlier(Index n, bool add_intercept) {
  return SimDesign(Outlier{n, add_intercept}, base_error_cov());
}

std::string SimDesign::name() const {
  return std::visit(detail::Overloaded{
                        [](const Homoskedastic& d) {
                          return "homoskedastic(N=" + std::to_string(d.n) + ",K=" + std::to_string(d.k_total) +
                                 ",L=" + std::to_string(d.l_total) + ")";
                        },
                        [](const GroupHet& d) {
                          return "grouphet(setup=" + std::to_string(d.setup) + (d.flip ? ",flipped)" : ")");
                        },
                        [](const Outlier& d) { return "outlier(N=" + std::to_string(d.n) + ")"; },
                    },
                    variant_);
}

std::vector<NamedEstimator> SimDesign::default_estimators() const {
  using E = NamedEstimator;
  return std::visit(
      detail::Overloaded{
          [](const Homoskedastic&) {
            return std::vector<E>{E::OLS,   E::TSLS,  E::Nagar,   E::AUK,     E::JIVE1,   E::JIVE2,
                                  E::TSJI1, E::TSJI2, E::UIJIVE1, E::UIJIVE2, E::UOJIVE1, E::UOJIVE2};
          },
          [](const GroupHet&) {
            return std::vector<E>{E::OLS,   E::TSLS,  E::Nagar,   E::AUK,    E::JIVE1,
                                  E::JIVE2, E::TSJI1, E::TSJI2, E::UOJIVE1, E::UOJIVE2};
          },
          [](const Outlier&) { return std::vector<E>{E::TSJI1, E::TSJI2, E::UOJIVE1, E::UOJIVE2}; },
      },
      variant_);
}

RoundDraw generate(const SimDesign& design, RngStream& rng) {
  return std::visit(detail::Overloaded{
                        [&](const Homoskedastic& d) { return generate_homoskedastic(d, design.error_cov(), rng); },
                        [&](const GroupHet& d) { return generate_group_het(d, rng); },
                        [&](const Outlier& d) { return generate_outlier(d, design.error_cov(), rng); },
                    },
                    design.variant());
}

Moments summarize(std::span<const double> estimates, double beta_true) {
  if (estimates.empty()) throw StateError("summarize needs at least one estimate");
  const double r = static_cast<double>(estimates.size());
  double sum = 0.0;
  for (double e : estimates) sum += e;
  const double mean = sum / r;
  double var = 0.0;
  double mse = 0.0;
  for (double e : estimates) {
    var += (e - mean) * (e - mean);
    mse += (e - beta_true) * (e - beta_true);
  }
  return Moments{std::abs(mean - beta_true), var / r, mse / r};
}

const EstimatorSummary& MonteCarloSummary::at(std::string_view label) const {
  for (const auto& row : rows)
    if (row.label == label) return row;
  throw StateError("no estimator '" + std::string(label) + "' in summary");
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("IVC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

MonteCarloSummary run(const SimDesign& design, std::span<const NamedEstimator> names, std::size_t rounds,
                      std::uint64_t base_seed, const RunOptions& options) {
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (names.empty()) throw ConfigError("no estimators requested");

  std::vector<RoundResult> results(rounds);
  const std::size_t threads = std::min(rounds, options.threads == 0 ? default_thread_count() : options.threads);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t r = next++; r < rounds; r = next++) {
      try {
        results[r] = evaluate_round(design, names, r, base_seed, options.estimate);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = rounds;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  // Fold in round order.
  MonteCarloSummary summary;
  summary.design = design.name();
  summary.rounds = rounds;
  summary.seed = base_seed;
  double r0_sum = 0.0;
  for (const auto& rr : results) r0_sum += rr.r0;
  summary.mean_r0 = r0_sum / static_cast<double>(rounds);

  const RoundDraw first = [&] {
    RngStream probe(base_seed, 0);
    return generate(design, probe);
  }();
  summary.beta_true = first.beta_true[0];
  for (std::size_t j = 0; j < names.size(); ++j) {
    EstimatorSummary row;
    row.label = std::string(to_string(names[j]));
    const auto& d = first.data;
    row.note = resolve_named<double>(names[j], d.n(), d.k(), d.l(), d.l1()).note;
    std::vector<double> ok;
    ok.reserve(rounds);
    double se_sum = 0.0;
    std::vector<double> all;
    if (options.keep_estimates) all.reserve(rounds);
    for (const auto& rr : results) {
      const double e = rr.estimate[j];
      if (options.keep_estimates) all.push_back(e);
      if (std::isnan(e)) {
        ++row.failures;
        continue;
      }
      ok.push_back(e);
      se_sum += rr.se_sq[j];
    }
    row.successes = ok.size();
    if (ok.empty()) {
      row.bias = row.variance = row.mse = row.mean_se_sq = kNaN;
    } else {
      const Moments m = summarize(ok, summary.beta_true);
      row.bias = m.bias;
      row.variance = m.variance;
      row.mse = m.mse;
      row.mean_se_sq = se_sum / static_cast<double>(ok.size());
    }
    if (options.keep_estimates) row.estimates = std::move(all);
    summary.rows.push_back(std::move(row));
  }
  return summary;
}

DensityTable density_export(const MonteCarloSummary& summary, std::size_t bins) {
  if (bins < 1) throw ConfigError("density export needs at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& row : summary.rows) {
    if (!row.estimates) throw StateError("estimates were not kept for '" + row.label + "'");
    for (double e : *row.estimates) {
      if (!std::isfinite(e)) continue;
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  }
  if (!(lo <= hi)) throw StateError("no finite estimates to bin");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  DensityTable t;
  const double width = (hi - lo) / static_cast<double>(bins);
  t.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) t.edges[b] = lo + width * static_cast<double>(b);
  t.edges[bins] = hi;
  for (const auto& row : summary.rows) {
    t.labels.push_back(row.label);
    std::vector<std::size_t> counts(bins, 0);
    for (double e : *row.estimates) {
      if (!std::isfinite(e)) continue;
      auto b = static_cast<std::size_t>((e - lo) / width);
      counts[std::min(b, bins - 1)] += 1;
    }
    t.counts.push_back(std::move(counts));
  }
  return t;
}

}  // namespace ivc::mc
