#pragma once

// Synthetic populations for the model-based experiments, linkage of the
// response register under the ELE model and within-area simple random
// sampling without replacement.

#include "sae/rng.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sae {

/// (0,0): Gaussian area effects and errors. (e,u): outlying area effects in
/// the last areas and a contaminated error distribution.
enum class Scenario { gaussian, outliers };

enum class Estimator { eblup, eblup_star, eblup_starstar, reblup, reblup_star, mq, mq_star };

const std::vector<Estimator>& all_estimators();
std::string estimator_name(Estimator e);
Estimator parse_estimator(const std::string& name);

struct ScenarioConfig {
  Scenario scenario = Scenario::gaussian;
  int areas = 40;
  int area_size = 100;
  int sample_size = 5;  // per area
  int units_per_block = 25;
  std::vector<double> lambdas{1.0, 0.9, 0.6, 0.4};
  int replicates = 200;
  std::uint64_t base_seed = 20240101;
  double huber_c = 1.345;
  std::vector<Estimator> estimators = all_estimators();
  bool mse = true;
  std::vector<double> tau_grid;  // empty: default grid

  // Generating model y = beta0 + beta1 x + u + e, x lognormal.
  double beta0 = 100.0;
  double beta1 = 5.0;
  double x_meanlog = 1.0;
  double x_sdlog = 0.5;
  double sigma2_u = 3.0;
  double sigma2_e = 6.0;
  int outlier_areas = 4;             // (e,u): last areas drawing u with the inflated variance
  double sigma2_u_outlier = 20.0;
  double sigma2_e_outlier = 150.0;
  double contamination = 0.03;

  double max_failure_rate = 0.02;

  /// Throws InputError on inconsistent settings.
  void validate() const;
};

struct PopulationFrame {
  Matrix X;  // N x p with intercept column
  Vector y;
  Vector y_star;
  std::vector<int> area_of;
  std::vector<int> block_of;
  std::vector<char> mislinked;  // y_star[j] != own record
  std::vector<std::string> unit_ids;
  std::vector<std::string> area_ids;
  std::vector<std::string> block_ids;
  std::vector<double> block_lambda;

  int size() const { return static_cast<int>(y.size()); }
  int num_areas() const { return static_cast<int>(area_ids.size()); }
  int num_blocks() const { return static_cast<int>(block_ids.size()); }

  /// Area means of the true responses.
  Vector area_means() const;
  /// Population units of each area, in frame order.
  std::vector<std::vector<int>> area_units() const;
};

/// Draws x, u, e and y; blocks assigned at random with exactly
/// units_per_block units of each block in each area. y_star = y.
PopulationFrame generate_population(const ScenarioConfig& config, Rng& rng);

/// Permutes responses within each (area, block) cell by an ELE draw.
void apply_linkage(PopulationFrame& pop, Rng& rng);

/// SRSWOR of n_per_area[i] units in area i. Returns the linked sample with
/// cell aggregates of the full frame attached. `units` receives the frame
/// indices of the sampled rows.
LinkedSample draw_sample(const PopulationFrame& pop, const std::vector<int>& n_per_area, Rng& rng,
                         std::vector<int>* units = nullptr);

/// Proportional allocation of n_total over areas with a floor of `min_size`
/// (capped at the area size); largest-remainder rounding.
std::vector<int> proportional_allocation(const PopulationFrame& pop, int n_total, int min_size = 5);

}  // namespace sae
