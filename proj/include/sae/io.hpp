#pragma once

// CSV input and output for the command-line tools.
//
//   sample.csv      unit_id, area_id, block_id, x1..xp, y_star
//   paradata.csv    block_id, lambda [, var_lambda] [, m_q, correct_q]
//   aggregates.csv  area_id, block_id, N_iq, n_iq, xbar_iq_1..xbar_iq_p
//   population.csv  unit_id, area_id, block_id, x1..xp [, y] [, y_star]
//   audit.csv       block_id, correct (one row per audited link, 0/1)
//                   or block_id, m_q, correct_q (one row per block)
//
// Covariates are the columns x1, x2, ... in numeric order; the intercept is
// added on load.

#include "sae/linkage.hpp"
#include "sae/population.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sae {

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool has(const std::string& column) const;
  /// Column index; InputError naming the file and column when absent.
  int column(const std::string& name) const;
  double number(std::size_t row, int col) const;
  int integer(std::size_t row, int col) const;
  const std::string& text(std::size_t row, int col) const;
};

/// Comma separated, first line is the header, fields may be double quoted.
CsvTable read_csv(const std::string& path);

/// Names x1..xp present in the header, ordered by index. Gaps are an error.
std::vector<std::string> covariate_columns(const CsvTable& t);

struct Paradata {
  std::vector<std::string> block_ids;
  std::vector<double> lambda;
  std::vector<double> var_lambda;  // empty when the file has no var_lambda column
  std::vector<AuditBlock> audit;   // empty when the file has no m_q, correct_q columns

  int find(const std::string& block_id) const;  // -1 when absent
};

Paradata read_paradata(const std::string& path);
void write_paradata(const std::string& path, const std::vector<LambdaEstimate>& estimates);

struct LoadedSample {
  LinkedSample sample;
  std::vector<std::string> unit_ids;
  std::vector<std::string> covariates;
  std::vector<double> lambda_variance;  // per block; empty when unknown
};

/// Joins sample, paradata and aggregates into a built LinkedSample.
LoadedSample load_linked_sample(const std::string& sample_csv, const std::string& paradata_csv,
                                const std::string& aggregates_csv);

/// Builds the sample with cell aggregates computed from a population register
/// whose unit_id column contains every sampled unit.
LoadedSample load_sample_with_population(const std::string& sample_csv, const std::string& paradata_csv,
                                         const std::string& population_csv);

/// Population register; y_star defaults to y. Block lambdas from `paradata`.
PopulationFrame read_population(const std::string& path, const Paradata& paradata);

std::vector<AuditBlock> read_audit(const std::string& path);

void write_sample_files(const LinkedSample& s, const std::vector<std::string>& unit_ids,
                        const std::string& sample_csv, const std::string& paradata_csv,
                        const std::string& aggregates_csv,
                        const std::vector<double>& lambda_variance = {});
void write_population(const PopulationFrame& pop, const std::string& path);

/// area_id, estimator, point, mse, rmse and the named MSE components.
void write_predictions(const std::string& path, const std::vector<std::string>& area_ids,
                       const std::vector<AreaPrediction>& predictions,
                       const std::vector<std::string>& component_names);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace sae
