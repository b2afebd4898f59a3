#pragma once

// Scenario files: flat `key = value` lines in TOML syntax (numbers, quoted
// strings, booleans and one-line arrays; `#` starts a comment). Keys are the
// ScenarioConfig field names:
//
//   scenario          "0,0" | "e,u"
//   areas, area_size, sample_size, units_per_block, replicates, base_seed
//   lambdas           [1.0, 0.9, 0.6, 0.4]
//   huber_c, mse, tau_grid, estimators ["EBLUP", "*EBLUP", ...]
//   beta0, beta1, x_meanlog, x_sdlog, sigma2_u, sigma2_e,
//   outlier_areas, sigma2_u_outlier, sigma2_e_outlier, contamination,
//   max_failure_rate
//
// Unknown keys and malformed values are InputErrors.

#include "sae/population.hpp"

#include <string>

namespace sae {

ScenarioConfig parse_scenario(const std::string& text, const std::string& origin = "config");
ScenarioConfig read_scenario(const std::string& path);
std::string scenario_name(Scenario s);
Scenario parse_scenario_name(const std::string& s);

}  // namespace sae
