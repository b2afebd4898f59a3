#pragma once

// Shared fixtures and independent dense-matrix oracles for the unit tests.

#include "sae/linkage.hpp"
#include "sae/population.hpp"
#include "sae/rng.hpp"
#include "sae/sample.hpp"
#include "sae/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace sae::test {

/// Small synthetic population, linked and sampled.
inline LinkedSample synthetic_sample(int areas, int area_size, int sample_size, std::vector<double> lambdas,
                                     std::uint64_t seed, Scenario scenario = Scenario::gaussian,
                                     int units_per_block = 0, PopulationFrame* pop_out = nullptr) {
  ScenarioConfig cfg;
  cfg.scenario = scenario;
  cfg.areas = areas;
  cfg.area_size = area_size;
  cfg.sample_size = sample_size;
  cfg.lambdas = std::move(lambdas);
  cfg.units_per_block = units_per_block > 0 ? units_per_block
                                            : area_size / static_cast<int>(cfg.lambdas.size());
  cfg.outlier_areas = std::min(cfg.outlier_areas, areas);
  Rng rng(seed);
  PopulationFrame pop = generate_population(cfg, rng);
  apply_linkage(pop, rng);
  LinkedSample s = draw_sample(pop, std::vector<int>(areas, sample_size), rng);
  if (pop_out) *pop_out = std::move(pop);
  return s;
}

/// Dense block-diagonal marginal covariance of the whole sample.
inline Matrix dense_covariance(const LinkedSample& s, double su, double se, const Vector& v) {
  const int n = s.size();
  Matrix V = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      if (s.area_of[j] == s.area_of[k]) V(j, k) = su;
    }
    V(j, j) += se + v(j);
  }
  return V;
}

/// Restricted log-likelihood computed from the full dense covariance, design X*.
inline double dense_reml(const LinkedSample& s, double su, double se, const Vector& v) {
  const Matrix V = dense_covariance(s, su, se, v);
  Eigen::LDLT<Matrix> ldlt(V);
  const Matrix& X = s.X_star;
  const Matrix ViX = ldlt.solve(X);
  const Matrix XtViX = X.transpose() * ViX;
  const Vector beta = XtViX.ldlt().solve(ViX.transpose() * s.y_star);
  const Vector r = s.y_star - X * beta;
  const double logdetV = ldlt.vectorD().array().log().sum();
  const double logdetX = std::log(XtViX.determinant());
  return -0.5 * (logdetV + logdetX + r.dot(ldlt.solve(r)));
}

/// Expected REML information for (sigma2_u, sigma2_e) from dense matrices.
inline Matrix dense_reml_information(const LinkedSample& s, double su, double se, const Vector& v) {
  const int n = s.size();
  const Matrix V = dense_covariance(s, su, se, v);
  const Matrix Vi = V.inverse();
  const Matrix& X = s.X_star;
  const Matrix P = Vi - Vi * X * (X.transpose() * Vi * X).inverse() * X.transpose() * Vi;
  Matrix Zu = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (s.area_of[j] == s.area_of[k]) Zu(j, k) = 1.0;
  const Matrix Ie = Matrix::Identity(n, n);
  const Matrix A = P * Zu, B = P * Ie;
  Matrix I(2, 2);
  I(0, 0) = 0.5 * (A * A).trace();
  I(0, 1) = I(1, 0) = 0.5 * (A * B).trace();
  I(1, 1) = 0.5 * (B * B).trace();
  return I;
}

/// Nelder-Mead minimiser, enough for two- or three-parameter oracles.
inline Vector nelder_mead(const std::function<double(const Vector&)>& f, Vector x0, double step,
                          int iters = 4000, double ftol = 1e-15) {
  const int d = static_cast<int>(x0.size());
  std::vector<Vector> pts(d + 1, x0);
  std::vector<double> val(d + 1);
  for (int k = 0; k < d; ++k) pts[k + 1](k) += step;
  for (int k = 0; k <= d; ++k) val[k] = f(pts[k]);
  for (int it = 0; it < iters; ++it) {
    std::vector<int> idx(d + 1);
    for (int k = 0; k <= d; ++k) idx[k] = k;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return val[a] < val[b]; });
    const int best = idx[0], worst = idx[d], second = idx[d - 1];
    if (std::abs(val[worst] - val[best]) < ftol * (1.0 + std::abs(val[best]))) break;
    Vector c = Vector::Zero(d);
    for (int k = 0; k < d; ++k) c += pts[idx[k]];
    c /= d;
    const Vector xr = c + (c - pts[worst]);
    const double fr = f(xr);
    if (fr < val[best]) {
      const Vector xe = c + 2.0 * (c - pts[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe, val[worst] = fe;
      } else {
        pts[worst] = xr, val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = xr, val[worst] = fr;
    } else {
      const Vector xc = c + 0.5 * (pts[worst] - c);
      const double fc = f(xc);
      if (fc < val[worst]) {
        pts[worst] = xc, val[worst] = fc;
      } else {
        for (int k = 1; k <= d; ++k) {
          pts[idx[k]] = pts[best] + 0.5 * (pts[idx[k]] - pts[best]);
          val[idx[k]] = f(pts[idx[k]]);
        }
      }
    }
  }
  int best = 0;
  for (int k = 1; k <= d; ++k)
    if (val[k] < val[best]) best = k;
  return pts[best];
}

/// Central-difference Newton polish of a smooth maximum found by a direct search.
inline Vector newton_polish(const std::function<double(const Vector&)>& f, Vector x, int steps = 6) {
  const int d = static_cast<int>(x.size());
  for (int s = 0; s < steps; ++s) {
    Vector g(d);
    Matrix H(d, d);
    const double f0 = f(x);
    Vector h(d);
    for (int k = 0; k < d; ++k) h(k) = 1e-4 * (1.0 + std::abs(x(k)));
    for (int a = 0; a < d; ++a) {
      Vector xp = x, xm = x;
      xp(a) += h(a);
      xm(a) -= h(a);
      const double fp = f(xp), fm = f(xm);
      g(a) = (fp - fm) / (2 * h(a));
      H(a, a) = (fp - 2 * f0 + fm) / (h(a) * h(a));
      for (int b = a + 1; b < d; ++b) {
        Vector pp = x, pm = x, mp = x, mm = x;
        pp(a) += h(a), pp(b) += h(b);
        pm(a) += h(a), pm(b) -= h(b);
        mp(a) -= h(a), mp(b) += h(b);
        mm(a) -= h(a), mm(b) -= h(b);
        H(a, b) = H(b, a) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h(a) * h(b));
      }
    }
    x -= H.ldlt().solve(g);
  }
  return x;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace sae::test
