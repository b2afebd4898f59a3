#pragma once

// Linked sample plus the population aggregates a secondary analyst holds:
// per (area, block) cell the register size N_iq, the sample count n_iq and
// the register column means of X.

#include "sae/types.hpp"

#include <string>
#include <vector>

namespace sae {

struct CellInfo {
  int area = 0;
  int block = 0;
  int N = 0;
  int n = 0;
  Vector xbar;            // register means of X over the cell (intercept included)
  std::vector<int> rows;  // sample rows belonging to the cell
};

struct AreaInfo {
  int N = 0;
  int n = 0;
  Vector xbar;         // register mean of X over the area
  Vector xbar_r;       // mean of X over non-sampled units
  Vector xbar_r_star;  // mean of the corrected design X* over non-sampled units
  double ybar_star = 0.0;
  std::vector<int> rows;
  std::vector<int> cells;
};

struct LinkedSample {
  Matrix X;  // n x p, column 0 is the intercept
  Vector y_star;
  std::vector<int> area_of;
  std::vector<int> block_of;
  std::vector<double> block_lambda;
  std::vector<CellInfo> cells;
  std::vector<std::string> area_ids;
  std::vector<std::string> block_ids;

  // Derived by build().
  Matrix X_star;
  Vector unit_lambda;  // effective lambda of each row's cell
  std::vector<int> cell_of;
  std::vector<AreaInfo> areas;

  int size() const { return static_cast<int>(y_star.size()); }
  int p() const { return static_cast<int>(X.cols()); }
  int num_areas() const { return static_cast<int>(areas.size()); }
  int num_blocks() const { return static_cast<int>(block_lambda.size()); }

  /// Validates inputs and fills the derived members. Cells with n = 0 are
  /// kept: they contribute to non-sampled means.
  void build();
};

/// Copy of `s` with different block lambdas (derived members rebuilt).
LinkedSample with_block_lambdas(const LinkedSample& s, std::vector<double> block_lambda);

/// Copy of `s` that treats every link as correct (the classical pipelines).
LinkedSample with_perfect_linkage(const LinkedSample& s);

/// Block-level averages of fitted values f = X beta and of f^2 over the
/// sampled units of each block, pooled across areas.
struct BlockMoments {
  std::vector<double> fbar;
  std::vector<double> fbar2;
};
BlockMoments block_moments(const LinkedSample& s, const Vector& beta);

/// Linkage variance diagonal v_j for every sample row at coefficients beta.
Vector linkage_variances(const LinkedSample& s, const Vector& beta);

/// d v / d lambda_q for every row (zero outside block q).
Vector linkage_variances_dlambda(const LinkedSample& s, const Vector& beta, int block);

}  // namespace sae
