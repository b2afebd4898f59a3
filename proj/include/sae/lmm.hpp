#pragma once

// Linkage-corrected nested-error model: GLS for beta with the corrected design
// X*, pseudo-REML for (sigma2_u, sigma2_e) treating the linkage variances V as
// known at the current beta, and the *EBLUP / **EBLUP area-mean predictors
// with their Prasad-Rao type MSE estimators.

#include "sae/covariance.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <optional>
#include <vector>

namespace sae {

enum class VarianceMethod { reml, ml };

struct LmmOptions {
  VarianceMethod method = VarianceMethod::reml;
  double tol = 1e-8;
  int max_iter = 100;
  bool fix_sigma2_u_zero = false;
  std::optional<VarianceComponents> start;
};

struct MixedFit {
  Vector beta;
  VarianceComponents delta;
  Vector v_diag;                          // linkage variances at beta, one per sample row
  std::vector<AreaCovariance> sigma;      // per-area covariance at (delta, v_diag)
  Matrix xtsx_inv;                        // (sum X*' Sigma^-1 X*)^-1
  Matrix info;                            // expected information for delta
  Matrix v_delta;                         // its (pseudo-)inverse
  int iterations = 0;
  bool boundary = false;                  // sigma2_u estimated on the boundary 0
  double gls_residual = 0.0;              // scaled sup-norm of the GLS normal equations
  double score_residual = 0.0;            // sup-norm of the variance-component score
};

MixedFit fit_lmm_linked(const LinkedSample& sample, const LmmOptions& options = {});

/// Restricted (or ordinary) Gaussian log-likelihood at (beta_for_v, delta),
/// with the linkage variances evaluated at beta_for_v. Used by tests as an
/// objective for independent optimisers.
double lmm_log_likelihood(const LinkedSample& sample, const VarianceComponents& delta,
                          const Vector& beta_for_v, VarianceMethod method);

/// u*_i = sigma2_u 1' Sigma_i^-1 (y*_i - X*_i beta).
Vector predict_area_effects_star(const MixedFit& fit, const LinkedSample& sample);

/// u**_i = sigma2_u l_i' Sigma_i^-1 (y*_i - X_i beta), l_i the per-unit lambdas.
Vector predict_area_effects_starstar(const MixedFit& fit, const LinkedSample& sample);

enum class EblupVariant { star, starstar };

std::vector<AreaPrediction> predict_means_eblup(const MixedFit& fit, const LinkedSample& sample,
                                                EblupVariant variant);

struct EblupMse {
  double g1 = 0.0;
  double g2 = 0.0;
  double g3 = 0.0;
  double g4 = 0.0;
  double total = 0.0;
};

std::vector<EblupMse> mse_eblup_star(const MixedFit& fit, const LinkedSample& sample);
std::vector<EblupMse> mse_eblup_starstar(const MixedFit& fit, const LinkedSample& sample);

/// b_i' = sigma2_u 1' Sigma_i^-1 with the linkage variances of `sample` at beta.
RowVector area_blup_weights(const LinkedSample& sample, const Vector& beta,
                            const VarianceComponents& delta, int area);

/// Rows q = 0..Q-1 hold d b_i' / d lambda_q (analytic).
Matrix area_blup_weights_dlambda(const LinkedSample& sample, const Vector& beta,
                                 const VarianceComponents& delta, int area);

/// g4_i for every area given per-block variances of the estimated lambdas.
Vector mse_g4_lambda(const MixedFit& fit, const LinkedSample& sample,
                     const std::vector<double>& lambda_variance);

/// Adds g4 into the totals of `mse` (inside the (1 - n/N)^2 factor).
void add_g4(std::vector<EblupMse>& mse, const Vector& g4, const LinkedSample& sample);

}  // namespace sae
