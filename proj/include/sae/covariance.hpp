#pragma once

#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <vector>

namespace sae {

/// Marginal covariance of the linked responses of one area:
/// Sigma = sigma2_u 1 1' + diag(sigma2_e + v_j).
struct AreaCovariance {
  Matrix sigma;
  Matrix sigma_inv;
};

std::vector<AreaCovariance> area_covariances(const LinkedSample& s, const VarianceComponents& delta,
                                             const Vector& v);

/// Rows of `m` (or entries of `v`) listed in `rows`.
Matrix take_rows(const Matrix& m, const std::vector<int>& rows);
Vector take(const Vector& v, const std::vector<int>& rows);

}  // namespace sae
