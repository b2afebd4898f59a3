#pragma once

// Linkage-corrected robust mixed model: Huber-type estimating equations for
// beta (standardized marginal residuals), the area effects (Fellner type) and
// the variance components (Richardson-Welsh Proposal II), the *REBLUP
// predictor and its conditional MSE estimator.

#include "sae/lmm.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <vector>

namespace sae {

/// Huber influence function u min(1, c/|u|).
double huber_psi(double u, double c);
/// 1 for |u| < c, else 0.
double huber_psi_prime(double u, double c);
/// psi(u)/u with its limit 1 at u = 0.
double huber_weight(double u, double c);
/// E psi_c(R)^2 for standard normal R.
double huber_K(double c);

struct RobustConfig {
  double c = 1.345;
  double tol = 1e-8;
  int max_iter = 300;
  /// Residual pooling for h2: false divides by (n - 1) with n the total sample
  /// size, true by (n_i - 1) with n_i the area sample size.
  bool h2_area_df = false;
};

struct RobustFit {
  Vector beta;
  Vector u;  // one per area
  VarianceComponents delta;
  double c = 1.345;
  double K = 1.0;
  Vector v_diag;                       // linkage variances at beta
  std::vector<AreaCovariance> sigma;   // per-area covariance at (delta, v_diag)
  Vector residual_norms;               // scaled sup-norms of the beta, u and delta equations
  Vector w2;                           // psi(t)/t per sample row
  Vector w3;                           // psi(u/sigma_u)/(u/sigma_u) per area
  int iterations = 0;
  bool boundary = false;               // sigma2_u on the boundary 0
};

RobustFit fit_reblup_star(const LinkedSample& sample, const RobustConfig& config = {});

/// Residual sup-norms of the three equation blocks at arbitrary parameters,
/// each scaled by the sum of absolute values of the terms it adds up.
Vector robust_equation_norms(const LinkedSample& sample, const Vector& beta, const Vector& u,
                             const VarianceComponents& delta, double c);

std::vector<AreaPrediction> predict_means_reblup_star(const RobustFit& fit, const LinkedSample& sample);

/// Sandwich covariance of (beta, u_1..u_D), dimension p + D.
Matrix sandwich_cov(const RobustFit& fit, const LinkedSample& sample);

/// Meat of the sandwich, exposed for direct-summation checks.
Matrix sandwich_meat(const RobustFit& fit, const LinkedSample& sample);

/// Expected Jacobian of the (beta, u) equations, rows indexed by equations.
Matrix sandwich_bread(const RobustFit& fit, const LinkedSample& sample);

/// Covariance of the variance-component estimates: numerical Jacobian of the
/// delta equations and per-area outer products of their contributions. On the
/// boundary only the sigma2_e entry is non-zero.
Matrix v_delta_robust(const RobustFit& fit, const LinkedSample& sample);

/// Per-area contributions to the delta equations (rows: areas, cols: sigma2_u, sigma2_e).
Matrix robust_delta_contributions(const LinkedSample& sample, const Vector& beta,
                                  const VarianceComponents& delta, double c);

struct ReblupMse {
  double h1 = 0.0;
  double h2 = 0.0;
  double h3 = 0.0;
  double bias2 = 0.0;
  double total = 0.0;
};

std::vector<ReblupMse> mse_reblup_star(const RobustFit& fit, const LinkedSample& sample,
                                       const RobustConfig& config = {});

}  // namespace sae
