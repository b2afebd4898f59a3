#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace sae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Random intercept variance and unit-level error variance.
struct VarianceComponents {
  double sigma2_u = 0.0;
  double sigma2_e = 1.0;

  Vector as_vector() const { return Vector{{sigma2_u, sigma2_e}}; }
  static VarianceComponents from_vector(const Vector& v) { return {v(0), v(1)}; }
};

/// Point prediction and MSE decomposition for one area. The meaning of
/// `components` depends on the estimator; `component_names` labels them.
struct AreaPrediction {
  int area = 0;
  std::string estimator;
  double point = 0.0;
  double mse = 0.0;
  std::vector<double> components;
};

}  // namespace sae
