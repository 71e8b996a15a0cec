#pragma once

// Dataset ingestion, output writers/readers and the four command drivers
// (simulate, estimate, bias, oracle-check) behind the ivc command line tool.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivc/design.hpp"
#include "ivc/estimators.hpp"
#include "ivc/montecarlo.hpp"

namespace ivc::io {

inline constexpr int kSchemaVersion = 1;

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

struct ColumnManifest {
  std::string outcome;
  std::vector<std::string> endogenous;
  std::vector<std::string> controls;
  std::vector<std::string> instruments;
  /// Prepend a column of ones to the controls.
  bool add_intercept = false;

  /// Throws ConfigError when the role sets overlap or are too small.
  void validate() const;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

/// Comma-separated, mandatory header row, '.' decimal; double-quoted fields
/// may contain commas and doubled quotes.
CsvTable read_csv_table(const std::string& path);
CsvTable parse_csv_table(std::istream& in);

struct LoadedData {
  DesignData<double> data;
  /// One-based data-row numbers dropped for missing or non-finite values.
  std::vector<std::size_t> dropped_rows;
  /// Names of the stacked coefficients: endogenous first, then controls.
  std::vector<std::string> coefficient_names;
};

/// Reads the manifest columns. Cells that are empty, NA, NaN, null or
/// infinite count as missing and drop their row; any other non-numeric text
/// is a DataError.
LoadedData load_csv(const std::string& path, const ColumnManifest& manifest);

/// Writes y, X*, W, Z* under the manifest names (the added intercept column
/// is not written back). Values round-trip exactly.
void write_dataset(const std::string& path, const DesignData<double>& data, const ColumnManifest& manifest);

/// Shortest decimal text that parses back to the same double; "nan"/"inf"
/// for non-finite values.
std::string format_double(double v);

enum class Mode { Simulate, Estimate, Bias, OracleCheck };
enum class OutputFormat { Csv, Json };

struct RunConfig {
  Mode mode = Mode::Simulate;

  // simulate / bias with a generated design
  std::string design;
  Index design_n = 101;
  bool flip_setup = false;
  bool intercept = false;
  std::size_t rounds = 1000;
  std::uint64_t seed = 1;
  bool keep_estimates = false;
  std::size_t bins = 40;
  std::size_t threads = 0;

  // estimate / bias on a dataset
  std::string data_path;
  ColumnManifest manifest;

  std::vector<NamedEstimator> estimators;  // empty: per-command default
  std::string out_path;                    // empty: standard output
  OutputFormat format = OutputFormat::Csv;
  double ba_threshold = kDefaultBaThreshold;
  VarianceDivisor divisor = VarianceDivisor::N;

  // oracle-check
  Index oracle_n = 30;
  Index oracle_k1 = 4;
  Index oracle_l1 = 1;
  std::size_t instances = 100;

  void validate() const;
};

inline constexpr Index kOracleMaxN = 200;
inline constexpr double kOracleTolerance = 1e-8;

/// Builds a simulation design from a preset name: table4-setup1,
/// table4-setup2, table5-setup1, table5-setup2, outlier.
mc::SimDesign design_from_config(const RunConfig& config);

/// Rows of a simulate summary file, as re-read by the tool itself.
struct SummaryRecord {
  std::string label;
  double bias = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  std::size_t failures = 0;
};

void write_summary(std::ostream& out, const mc::MonteCarloSummary& summary, OutputFormat format);
std::vector<SummaryRecord> read_summary(const std::string& path, OutputFormat format);
void write_estimates(std::ostream& out, const mc::MonteCarloSummary& summary);
void write_density(std::ostream& out, const mc::DensityTable& table);

/// Side-file path next to `out`: "s1.csv" + "density" -> "s1.density.csv".
std::string side_path(const std::string& out, const std::string& tag);

/// Each command writes its table to config.out_path (or `out` when empty)
/// and diagnostics to `log`. Returns an ExitCode.
int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_estimate(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_bias(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_oracle_check(const RunConfig& config, std::ostream& out, std::ostream& log);

/// Random full-rank instance used by oracle-check: intercept plus one
/// Gaussian control, K1 Gaussian instruments, endogenous regressors driven by
/// all instruments and correlated with the structural error.
DesignData<double> random_oracle_instance(Index n, Index k1, Index l1, std::uint64_t seed, std::uint64_t index);

}  // namespace ivc::io
