#pragma once

// Replicated simulation: population, linkage, sampling and every requested
// estimator per replicate. Replicates run in parallel with OpenMP; the serial
// driver is kept as the reference and produces identical results.

#include "sae/population.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace sae {

struct FitDiagnostics {
  double max_certificate = 0.0;  // largest scaled estimating-equation residual
  double min_eigenvalue = 0.0;   // smallest eigenvalue over covariance/information matrices
  double max_asymmetry = 0.0;    // largest |M - M'| of those matrices as returned
  bool boundary = false;         // a variance component estimated on the boundary
  int mq_fallbacks = 0;          // area M-quantile refits replaced by grid fits
};

struct AreaEstimates {
  Matrix point;  // areas x estimators
  Matrix mse;    // areas x estimators (NaN when MSE estimation is off)
  FitDiagnostics diag;
};

struct EstimationOptions {
  double huber_c = 1.345;
  bool mse = true;
  std::vector<double> tau_grid;  // empty: default grid
};

/// Fits every estimator in `which` on one linked sample. The classical
/// estimators use the same code on the sample with all lambdas set to 1.
AreaEstimates estimate_all(const LinkedSample& sample, const std::vector<Estimator>& which,
                           const EstimationOptions& options);

struct ReplicateResult {
  int replicate = 0;
  bool ok = false;
  std::string failure;
  Vector truth;  // true area means
  Matrix point;
  Matrix mse;
  FitDiagnostics diag;
  double mislink_rate = 0.0;  // share of mislinked population records
};

struct MonteCarloResult {
  std::vector<std::string> estimators;
  std::vector<ReplicateResult> replicates;
  int failures = 0;
};

using ProgressFn = std::function<void(int done, int total)>;

ReplicateResult run_replicate(const ScenarioConfig& config, int replicate);

/// Throws NumericalError when more than config.max_failure_rate of the
/// replicates fail.
MonteCarloResult run_monte_carlo(const ScenarioConfig& config, bool parallel = true,
                                 const ProgressFn& progress = {});

/// Repeated sampling from a fixed population whose linked responses are
/// already in pop.y_star; only the sampling stage is random.
MonteCarloResult run_design_based(const PopulationFrame& pop, const std::vector<int>& n_per_area,
                                  const ScenarioConfig& config, bool parallel = true,
                                  const ProgressFn& progress = {});

}  // namespace sae
