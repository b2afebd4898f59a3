#pragma once

// Linkage-corrected linear M-quantile regression: tilted Huber estimating
// equations with the linkage variance added to the residual scale, M-quantile
// coefficients corrected for mislinking, the *MQ area predictor and its
// linearization MSE estimator.

#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <vector>

namespace sae {

enum class MqScale { weighted, mad };

/// How the within-cell mean coefficient enters the corrected coefficient:
/// the constant 0.5 or the cell average of the raw coefficients.
enum class MqCorrection { half, mean };

/// {0.02, 0.04, ..., 0.98}.
std::vector<double> default_tau_grid();

struct MqConfig {
  double c = 1.345;
  double tol = 1e-9;
  int max_iter = 500;
  std::vector<double> grid = default_tau_grid();
  MqScale scale = MqScale::weighted;
  MqCorrection correction = MqCorrection::half;
};

/// 2 |tau - 1(r < 0)| psi_c(r).
double mq_psi(double r, double tau, double c);
/// mq_psi(r)/r with its one-sided limit at r = 0.
double mq_weight(double r, double tau, double c);

struct MqTauFit {
  double tau = 0.5;
  Vector beta;
  double sigma2 = 1.0;
  Vector upsilon;  // sigma2 + linkage variance, per sample row
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;  // scaled sup-norm of the corrected normal equations
};

/// Throws ConvergenceError if the iteration does not settle.
MqTauFit fit_mq_tau(const LinkedSample& sample, double tau, const MqConfig& config,
                    const MqTauFit* start = nullptr);

struct MqGridFit {
  std::vector<MqTauFit> fits;  // one per grid point, increasing tau
};

MqGridFit fit_mq_grid(const LinkedSample& sample, const MqConfig& config);

/// Fitted index x_j' beta_tau for every sample row (rows) and grid point
/// (columns), made nondecreasing along each row by isotonic regression.
Matrix monotone_index(const LinkedSample& sample, const MqGridFit& grid);

/// Nondecreasing least-squares fit to `v` (pool adjacent violators).
Vector isotonic_increasing(const Vector& v);

struct MqCoefficients {
  Vector tau_starstar;         // from the linked responses, per row
  Vector tau_star;             // corrected, per row
  std::vector<bool> clamped;   // response outside the fitted envelope
  Vector tau_area;             // per-area average of tau_star
};

MqCoefficients mq_coefficients(const LinkedSample& sample, const MqGridFit& grid, const MqConfig& config);

/// Fits at each area coefficient. A fit that fails falls back to the nearest
/// converged grid fit (flagged by converged == false on the returned copy).
std::vector<MqTauFit> fit_mq_areas(const LinkedSample& sample, const MqCoefficients& coef,
                                   const MqGridFit& grid, const MqConfig& config);

std::vector<AreaPrediction> predict_means_mq_star(const LinkedSample& sample,
                                                  const std::vector<MqTauFit>& area_fits);

struct MqMse {
  double variance = 0.0;
  double bias2 = 0.0;
  double v_tau = 0.0;
  double total = 0.0;
};

std::vector<MqMse> mse_mq_star(const LinkedSample& sample, const MqCoefficients& coef,
                               const std::vector<MqTauFit>& area_fits, const MqConfig& config);

/// Grid, coefficients and area fits in one call.
struct MqStarFit {
  MqGridFit grid;
  MqCoefficients coef;
  std::vector<MqTauFit> area_fits;
};
MqStarFit fit_mq_star(const LinkedSample& sample, const MqConfig& config);

}  // namespace sae
