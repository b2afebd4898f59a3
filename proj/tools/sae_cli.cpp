// sae: small area estimation from linked data.
//
//   sae fit --sample s.csv --paradata p.csv --aggregates a.csv --method eblup-star --out dir
//   sae predict --sample s.csv --paradata p.csv --population pop.csv --method mq-star --out dir
//   sae simulate --config configs/scenario_00.toml --out dir
//   sae simulate --config c.toml --population pop.csv --paradata p.csv --out dir
//   sae audit-lambda --audit audit.csv --out paradata.csv

#include "commands.hpp"

#include "sae/error.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_estimation(CLI::App* app, sae::cli::FitArgs& a, bool population) {
  app->add_option("--sample", a.sample, "linked sample CSV")->required()->check(CLI::ExistingFile);
  app->add_option("--paradata", a.paradata, "block lambdas CSV")->required()->check(CLI::ExistingFile);
  if (population) {
    app->add_option("--population", a.population, "population register CSV")->required()->check(CLI::ExistingFile);
  } else {
    app->add_option("--aggregates", a.aggregates, "cell aggregates CSV")->required()->check(CLI::ExistingFile);
  }
  app->add_option("--out", a.out, "output directory")->capture_default_str();
  app->add_option("--method", a.est.method, "estimator")
      ->check(CLI::IsMember({"eblup-star", "eblup-starstar", "reblup-star", "mq-star"}))
      ->capture_default_str();
  app->add_option("--huber-c", a.est.huber_c, "Huber tuning constant")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--tau-grid", a.est.tau_grid, "M-quantile orders, increasing, in (0, 1)")->delimiter(',');
  app->add_option_function<std::string>(
         "--mse", [&a](const std::string& v) { a.est.mse = v == "on"; }, "MSE estimation")
      ->check(CLI::IsMember({"on", "off"}))
      ->default_str("on");
  app->add_option("--lambda-uncertainty", a.est.lambda_uncertainty, "propagate estimated lambdas")
      ->check(CLI::IsMember({"none", "binomial", "paper"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small area estimation with linked data"};
  app.require_subcommand(1);

  sae::cli::FitArgs fit_args, predict_args;
  auto* fit = app.add_subcommand("fit", "fit on a linked sample with cell aggregates");
  add_estimation(fit, fit_args, false);
  auto* predict = app.add_subcommand("predict", "fit on a linked sample, aggregates from a population register");
  add_estimation(predict, predict_args, true);

  sae::cli::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "model-based Monte Carlo experiment");
  simulate->add_option("--config", sim.config, "scenario file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "output directory")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "override base_seed");
  simulate->add_option("--replicates", sim.replicates, "override replicates")->check(CLI::PositiveNumber);
  auto* sim_pop = simulate->add_option("--population", sim.population, "fixed register with y (and y_star)")
                      ->check(CLI::ExistingFile);
  simulate->add_option("--paradata", sim.paradata, "block lambdas of the register")
      ->check(CLI::ExistingFile)
      ->needs(sim_pop);
  sim_pop->needs("--paradata");
  simulate->add_flag("--serial", sim.serial, "run replicates on one thread");
  simulate->add_flag("--dump-replicates", sim.dump_replicates, "write replicates.csv");
  simulate->add_flag("--dump-population", sim.dump_population, "write the first replicate's population");
  simulate->add_flag("--quiet", sim.quiet, "no progress on stderr");

  sae::cli::AuditArgs audit;
  auto* audit_cmd = app.add_subcommand("audit-lambda", "estimate block lambdas from an audit sample");
  audit_cmd->add_option("--audit", audit.audit, "audit CSV")->required()->check(CLI::ExistingFile);
  audit_cmd->add_option("--out", audit.out, "paradata CSV to write")->capture_default_str();
  audit_cmd->add_option("--form", audit.form, "variance form")
      ->check(CLI::IsMember({"binomial", "paper"}))
      ->capture_default_str();
  audit_cmd->add_option("--sample", audit.sample, "linked sample CSV (block sizes for --form paper)")
      ->check(CLI::ExistingFile);
  audit_cmd->add_option("--paradata", audit.paradata, "blocks that must appear in the audit")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sae::cli::input_error;
  }

  try {
    if (*fit) return sae::cli::cmd_fit(fit_args);
    if (*predict) return sae::cli::cmd_predict(predict_args);
    if (*simulate) return sae::cli::cmd_simulate(sim);
    if (*audit_cmd) return sae::cli::cmd_audit_lambda(audit);
  } catch (const sae::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return sae::cli::input_error;
  } catch (const sae::ConvergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << " (iterations " << e.iterations() << ", last change "
              << e.last_change() << ")\n";
    return sae::cli::numerical_error;
  } catch (const sae::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return sae::cli::numerical_error;
  }
  return sae::cli::input_error;
}
