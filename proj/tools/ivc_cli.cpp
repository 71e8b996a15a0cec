// ivc: C-matrix IV estimators, approximate-bias coefficients and the
// simulation harness from the command line.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ivc/cli_io.hpp"

namespace {

using ivc::io::Mode;
using ivc::io::OutputFormat;
using ivc::io::RunConfig;

void add_estimator_option(CLI::App* app, std::vector<std::string>& names) {
  app->add_option("-e,--estimators", names, "Estimator names (OLS TSLS Nagar AUK JIVE1 JIVE2 IJIVE1 IJIVE2 "
                                            "UIJIVE1 UIJIVE2 TSJI1 TSJI2 UOJIVE1 UOJIVE2)")
      ->delimiter(',');
}

void add_output_options(CLI::App* app, RunConfig& cfg, std::string& format) {
  app->add_option("-o,--out", cfg.out_path, "Output file (default: standard output)");
  app->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
}

void add_manifest_options(CLI::App* app, RunConfig& cfg) {
  app->add_option("--data", cfg.data_path, "Input CSV with a header row");
  app->add_option("--outcome", cfg.manifest.outcome, "Outcome column");
  app->add_option("--endogenous", cfg.manifest.endogenous, "Endogenous regressor columns")->delimiter(',');
  app->add_option("--controls", cfg.manifest.controls, "Exogenous control columns")->delimiter(',');
  app->add_option("--instruments", cfg.manifest.instruments, "Excluded instrument columns")->delimiter(',');
  app->add_flag("--add-intercept", cfg.manifest.add_intercept, "Prepend a column of ones to the controls");
}

void add_design_options(CLI::App* app, RunConfig& cfg) {
  app->add_option("--design", cfg.design,
                  "Simulation design: table4-setup1, table4-setup2, table5-setup1, table5-setup2, outlier");
  app->add_option("--n", cfg.design_n, "Sample size for the outlier design (101, 401, 901, 1601, ...)");
  app->add_flag("--flip-setup", cfg.flip_setup, "Swap the group covariance assignment of the table5 designs");
  app->add_flag("--intercept", cfg.intercept, "Add an intercept control to the outlier design");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified C-matrix instrumental-variable estimators"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::vector<std::string> names;
  std::string format = "csv";
  bool n_minus_l = false;

  auto* sim = app.add_subcommand("simulate", "Run a seeded Monte Carlo study");
  add_design_options(sim, cfg);
  sim->add_option("--rounds", cfg.rounds, "Number of rounds");
  sim->add_option("--seed", cfg.seed, "Base seed");
  sim->add_flag("--keep-estimates", cfg.keep_estimates, "Also write per-round estimates and a density table");
  sim->add_option("--bins", cfg.bins, "Histogram bins for the density table");
  sim->add_option("--threads", cfg.threads, "Worker threads (default: $IVC_THREADS or hardware count)");
  add_estimator_option(sim, names);
  add_output_options(sim, cfg, format);

  auto* est = app.add_subcommand("estimate", "Estimate a dataset with one or more estimators");
  add_manifest_options(est, cfg);
  add_estimator_option(est, names);
  add_output_options(est, cfg, format);
  est->add_option("--ba-threshold", cfg.ba_threshold, "Leverage margin below which the BA flag is raised");
  est->add_flag("--n-minus-l", n_minus_l, "Use N - L instead of N as the residual variance divisor");

  auto* bias = app.add_subcommand("bias", "Approximate-bias coefficients and leverage diagnostics");
  add_manifest_options(bias, cfg);
  add_design_options(bias, cfg);
  bias->add_option("--seed", cfg.seed, "Seed for the generated design");
  bias->add_option("--ba-threshold", cfg.ba_threshold, "Leverage margin below which the BA flag is raised");
  add_estimator_option(bias, names);
  add_output_options(bias, cfg, format);

  auto* oracle = app.add_subcommand("oracle-check", "Compare closed-form JIVE1 with a leave-one-out jackknife");
  oracle->add_option("--n", cfg.oracle_n, "Observations per instance (at most 200)");
  oracle->add_option("--k1", cfg.oracle_k1, "Excluded instruments");
  oracle->add_option("--l1", cfg.oracle_l1, "Endogenous regressors");
  oracle->add_option("--instances", cfg.instances, "Number of random instances");
  oracle->add_option("--seed", cfg.seed, "Base seed");
  add_output_options(oracle, cfg, format);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ivc::io::kExitUsage;
  }

  cfg.format = format == "json" ? OutputFormat::Json : OutputFormat::Csv;
  cfg.divisor = n_minus_l ? ivc::VarianceDivisor::NMinusL : ivc::VarianceDivisor::N;
  for (const auto& n : names) {
    const auto parsed = ivc::parse_named(n);
    if (!parsed) {
      std::cerr << "error: unknown estimator '" << n << "'\n";
      return ivc::io::kExitUsage;
    }
    cfg.estimators.push_back(*parsed);
  }

  if (sim->parsed()) {
    cfg.mode = Mode::Simulate;
    return ivc::io::cmd_simulate(cfg, std::cout, std::cerr);
  }
  if (est->parsed()) {
    cfg.mode = Mode::Estimate;
    return ivc::io::cmd_estimate(cfg, std::cout, std::cerr);
  }
  if (bias->parsed()) {
    cfg.mode = Mode::Bias;
    return ivc::io::cmd_bias(cfg, std::cout, std::cerr);
  }
  cfg.mode = Mode::OracleCheck;
  return ivc::io::cmd_oracle_check(cfg, std::cout, std::cerr);
}
