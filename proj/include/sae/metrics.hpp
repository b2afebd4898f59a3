#pragma once

// Monte Carlo summaries: per-area relative bias and relative root MSE of the
// point estimators, efficiency against the EBLUP, and the same diagnostics
// for the root-MSE estimators. Medians are taken over areas.

#include "sae/montecarlo.hpp"
#include "sae/types.hpp"

#include <string>
#include <vector>

namespace sae {

struct EstimatorSummary {
  std::string name;
  Vector relbias_pct;  // per area
  Vector rrmse_pct;    // per area
  Vector rmse;         // per area, empirical
  double median_relbias_pct = 0.0;
  double median_abs_relbias_pct = 0.0;
  double median_rrmse_pct = 0.0;
  double eff = 0.0;  // NaN without an EBLUP baseline
};

struct MseSummary {
  std::string name;
  double median_relbias_pct = 0.0;
  double median_rrmse_pct = 0.0;
};

struct SimulationReport {
  std::vector<EstimatorSummary> estimators;
  std::vector<MseSummary> mse;  // empty when MSE estimation was off
  int replicates_used = 0;
  int failures = 0;
  double max_certificate = 0.0;
  double min_eigenvalue = 0.0;
  double max_asymmetry = 0.0;
  double boundary_rate = 0.0;
  double mean_mislink_rate = 0.0;
};

double median(std::vector<double> v);

/// Throws InputError without successful replicates.
SimulationReport metrics(const MonteCarloResult& result);

/// table1.csv: estimator, median_relbias_pct, median_abs_relbias_pct, median_rrmse_pct, eff
void write_table1(const SimulationReport& report, const std::string& path);
/// table2.csv: estimator, median_relbias_pct, median_rrmse_pct (root-MSE estimators)
void write_table2(const SimulationReport& report, const std::string& path);

}  // namespace sae
