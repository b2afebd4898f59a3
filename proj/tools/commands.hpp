#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sae::cli {

/// Exit codes shared by every subcommand.
enum ExitCode { ok = 0, input_error = 2, numerical_error = 3 };

struct EstimationArgs {
  std::string method = "eblup-star";
  double huber_c = 1.345;
  std::vector<double> tau_grid;
  bool mse = true;
  std::string lambda_uncertainty = "none";  // none | binomial | paper
};

struct FitArgs {
  std::string sample;
  std::string paradata;
  std::string aggregates;  // fit
  std::string population;  // predict
  std::string out = ".";
  EstimationArgs est;
};

struct SimulateArgs {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::string population;  // fixed register: design-based mode
  std::string paradata;
  bool serial = false;
  bool dump_replicates = false;
  bool dump_population = false;
  bool quiet = false;
};

struct AuditArgs {
  std::string audit;
  std::string out = "paradata.csv";
  std::string form = "binomial";  // binomial | paper
  std::string sample;             // needed by the paper form
  std::string paradata;           // optional: blocks that must be audited
};

int cmd_fit(const FitArgs& args);
int cmd_predict(const FitArgs& args);
int cmd_simulate(const SimulateArgs& args);
int cmd_audit_lambda(const AuditArgs& args);

}  // namespace sae::cli
