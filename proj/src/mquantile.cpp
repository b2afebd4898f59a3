#include "sae/mquantile.hpp"

#include "sae/covariance.hpp"
#include "sae/error.hpp"
#include "sae/linkage.hpp"
#include "sae/robust.hpp"

#include <algorithm>
#include <cmath>

namespace sae {

std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 49; ++k) g.push_back(0.02 * k);
  return g;
}

double mq_psi(double r, double tau, double c) {
  return 2.0 * (r < 0.0 ? 1.0 - tau : tau) * huber_psi(r, c);
}

double mq_weight(double r, double tau, double c) {
  return 2.0 * (r < 0.0 ? 1.0 - tau : tau) * huber_weight(r, c);
}

namespace {

double median_abs(const Vector& e) {
  std::vector<double> a(e.size());
  for (int j = 0; j < e.size(); ++j) a[j] = std::abs(e(j));
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + mid, a.end());
  double m = a[mid];
  if (a.size() % 2 == 0) m = 0.5 * (m + *std::max_element(a.begin(), a.begin() + mid));
  return m;
}

Vector wls(const Matrix& X, const Vector& w, const Vector& y) {
  const Matrix XtW = X.transpose() * w.asDiagonal();
  Eigen::LDLT<Matrix> ldlt(XtW * X);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    throw NumericalError("M-quantile weighted least squares is singular");
  }
  return ldlt.solve(XtW * y);
}

double mq_rho(double r, double tau, double c) {
  const double a = std::abs(r);
  const double h = a <= c ? 0.5 * r * r : c * a - 0.5 * c * c;
  return 2.0 * (r < 0.0 ? 1.0 - tau : tau) * h;
}

// Solves sum_j x_j psi_tau(e_j / sqrt(ups_j)) / sqrt(ups_j) = 0 for fixed
// ups by Newton steps with backtracking on the convex objective
// sum_j rho_tau(e_j / sqrt(ups_j)). Reweighting alone can cycle here: the
// tilted weights jump where a residual changes sign.
Vector solve_beta_fixed_scale(const Matrix& X, const Vector& y, const Vector& ups, double tau, double c,
                              Vector beta) {
  const int n = static_cast<int>(y.size());
  const Vector sq = ups.cwiseSqrt();
  auto objective = [&](const Vector& b) {
    const Vector r = (y - X * b).cwiseQuotient(sq);
    double o = 0.0;
    for (int j = 0; j < n; ++j) o += mq_rho(r(j), tau, c);
    return o;
  };
  double obj = objective(beta);
  for (int it = 0; it < 200; ++it) {
    const Vector r = (y - X * beta).cwiseQuotient(sq);
    Vector g = Vector::Zero(X.cols());
    Vector curv(n), wts(n);
    for (int j = 0; j < n; ++j) {
      g += (mq_psi(r(j), tau, c) / sq(j)) * X.row(j).transpose();
      curv(j) = 2.0 * (r(j) < 0.0 ? 1.0 - tau : tau) * huber_psi_prime(r(j), c) / ups(j);
      wts(j) = mq_weight(r(j), tau, c) / ups(j);
    }
    Eigen::LDLT<Matrix> H(X.transpose() * curv.asDiagonal() * X);
    if (H.info() != Eigen::Success || H.rcond() < 1e-12) H.compute(X.transpose() * wts.asDiagonal() * X);
    const Vector d = H.solve(g);
    const double slope = g.dot(d);
    double t = 1.0;
    Vector next = beta + d;
    double obj_next = objective(next);
    while (obj_next > obj - 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      next = beta + t * d;
      obj_next = objective(next);
    }
    const double step = (t * d).cwiseAbs().maxCoeff();
    if (obj_next <= obj) {
      beta = next;
      obj = obj_next;
    }
    if (step < 1e-14 * (1.0 + beta.cwiseAbs().maxCoeff()) || !(obj_next < obj + 1e-300)) break;
  }
  return beta;
}

double normal_equation_norm(const LinkedSample& s, const MqTauFit& f, double c) {
  const Vector e = s.y_star - s.X_star * f.beta;
  Vector h = Vector::Zero(s.p());
  Vector a = Vector::Ones(s.p());
  for (int j = 0; j < s.size(); ++j) {
    const double sq = std::sqrt(f.upsilon(j));
    const double ps = mq_psi(e(j) / sq, f.tau, c) / sq;
    h += ps * s.X_star.row(j).transpose();
    a += std::abs(ps) * s.X_star.row(j).transpose().cwiseAbs();
  }
  return h.cwiseAbs().cwiseQuotient(a).maxCoeff();
}

}  // namespace

namespace {

// beta solving the corrected normal equations for a given scale, with the
// linkage variances evaluated at that beta.
Vector beta_at_scale(const LinkedSample& s, double sigma2, double tau, double c, Vector beta, int max_iter) {
  for (int it = 0; it < max_iter; ++it) {
    const Vector ups = linkage_variances(s, beta).array() + sigma2;
    const Vector next = solve_beta_fixed_scale(s.X_star, s.y_star, ups, tau, c, beta);
    const double change = (next - beta).cwiseAbs().maxCoeff() / (1.0 + beta.cwiseAbs().maxCoeff());
    beta = next;
    if (change < 1e-13) return beta;
  }
  throw ConvergenceError("fit_mq_tau: linkage variances did not settle", max_iter, 0.0);
}

double scale_update(const LinkedSample& s, const Vector& beta, double sigma2, double tau, double c,
                    MqScale method) {
  const Vector e = s.y_star - s.X_star * beta;
  if (method == MqScale::mad) return std::pow(median_abs(e) / 0.6745, 2);
  const Vector ups = linkage_variances(s, beta).array() + sigma2;
  double num = 0.0, den = 0.0;
  for (int j = 0; j < s.size(); ++j) {
    const double w = mq_weight(e(j) / std::sqrt(ups(j)), tau, c);
    num += w * e(j) * e(j);
    den += w;
  }
  return num / den;
}

}  // namespace

MqTauFit fit_mq_tau(const LinkedSample& s, double tau, const MqConfig& cfg, const MqTauFit* start) {
  if (!(tau > 0.0 && tau < 1.0)) throw InputError("fit_mq_tau: tau must lie in (0, 1)");
  if (s.size() <= s.p()) throw InputError("fit_mq_tau: need more sample rows than covariates");
  const double c = cfg.c;
  MqTauFit f;
  f.tau = tau;
  Vector beta;
  double s2;
  if (start) {
    beta = start->beta;
    s2 = start->sigma2;
  } else {
    beta = wls(s.X_star, Vector::Ones(s.size()), s.y_star);
    s2 = std::pow(median_abs(s.y_star - s.X_star * beta) / 0.6745, 2);
  }
  s2 = std::max(s2, 1e-12);

  // The scale solves g(s2) = update(s2) - s2 = 0 with beta solved exactly at
  // each trial scale. g jumps where a residual changes sign (the tilted
  // weights are discontinuous at zero), so a plain fixed-point iteration can
  // cycle; bracketing converges to the root or to the jump that crosses zero.
  int evals = 0;
  auto g = [&](double x, Vector& b) {
    ++evals;
    b = beta_at_scale(s, x, tau, c, b, cfg.max_iter);
    return std::max(scale_update(s, b, x, tau, c, cfg.scale), 1e-12) - x;
  };
  Vector b_lo = beta, b_hi = beta;
  double lo = s2, hi = s2;
  double g_lo = g(lo, b_lo);
  double g_hi = g_lo;
  b_hi = b_lo;
  if (g_lo > 0.0) {
    while (g_hi > 0.0) {
      if (evals > cfg.max_iter) throw ConvergenceError("fit_mq_tau: scale bracket not found", evals, g_hi);
      lo = hi;
      g_lo = g_hi;
      b_lo = b_hi;
      hi *= 2.0;
      g_hi = g(hi, b_hi);
    }
  } else {
    while (g_lo < 0.0) {
      if (evals > cfg.max_iter || lo < 1e-12) {
        throw ConvergenceError("fit_mq_tau: scale bracket not found", evals, g_lo);
      }
      hi = lo;
      g_hi = g_lo;
      b_hi = b_lo;
      lo *= 0.5;
      g_lo = g(lo, b_lo);
    }
  }
  // Illinois-modified regula falsi on [lo, hi] with g(lo) >= 0 >= g(hi).
  double fl = g_lo, fh = g_hi;
  int side = 0;
  while (hi - lo > cfg.tol * (1.0 + hi) && g_lo != 0.0 && g_hi != 0.0) {
    if (evals > cfg.max_iter) throw ConvergenceError("fit_mq_tau: scale did not converge", evals, hi - lo);
    double x = (fl - fh) != 0.0 ? lo + fl * (hi - lo) / (fl - fh) : 0.5 * (lo + hi);
    const double margin = 1e-3 * (hi - lo);
    if (!(x > lo + margin && x < hi - margin)) x = 0.5 * (lo + hi);
    Vector bx = 0.5 * (b_lo + b_hi);
    const double gx = g(x, bx);
    if (gx >= 0.0) {
      lo = x;
      g_lo = fl = gx;
      b_lo = bx;
      if (side == -1) fh *= 0.5;
      side = -1;
    } else {
      hi = x;
      g_hi = fh = gx;
      b_hi = bx;
      if (side == 1) fl *= 0.5;
      side = 1;
    }
  }
  f.sigma2 = g_lo == 0.0 ? lo : (g_hi == 0.0 ? hi : 0.5 * (lo + hi));
  f.beta = beta_at_scale(s, f.sigma2, tau, c, 0.5 * (b_lo + b_hi), cfg.max_iter);
  f.iterations = evals;
  f.converged = true;
  f.upsilon = linkage_variances(s, f.beta).array() + f.sigma2;
  f.residual_norm = normal_equation_norm(s, f, c);
  return f;
}

MqGridFit fit_mq_grid(const LinkedSample& s, const MqConfig& cfg) {
  if (cfg.grid.size() < 2) throw InputError("fit_mq_grid: need at least two grid points");
  if (!std::is_sorted(cfg.grid.begin(), cfg.grid.end()) ||
      std::adjacent_find(cfg.grid.begin(), cfg.grid.end()) != cfg.grid.end()) {
    throw InputError("fit_mq_grid: grid must be strictly increasing");
  }
  MqGridFit g;
  // Start from the median fit and walk outwards, warm-starting each fit.
  const int G = static_cast<int>(cfg.grid.size());
  int mid = 0;
  for (int k = 0; k < G; ++k) {
    if (std::abs(cfg.grid[k] - 0.5) < std::abs(cfg.grid[mid] - 0.5)) mid = k;
  }
  g.fits.resize(G);
  g.fits[mid] = fit_mq_tau(s, cfg.grid[mid], cfg);
  for (int k = mid + 1; k < G; ++k) g.fits[k] = fit_mq_tau(s, cfg.grid[k], cfg, &g.fits[k - 1]);
  for (int k = mid - 1; k >= 0; --k) g.fits[k] = fit_mq_tau(s, cfg.grid[k], cfg, &g.fits[k + 1]);
  return g;
}

Vector isotonic_increasing(const Vector& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> mean;
  std::vector<int> size;
  for (int k = 0; k < n; ++k) {
    mean.push_back(v(k));
    size.push_back(1);
    while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
      const double m2 = mean.back();
      const int s2 = size.back();
      mean.pop_back();
      size.pop_back();
      mean.back() = (mean.back() * size.back() + m2 * s2) / (size.back() + s2);
      size.back() += s2;
    }
  }
  Vector out(n);
  int k = 0;
  for (std::size_t b = 0; b < mean.size(); ++b) {
    for (int t = 0; t < size[b]; ++t) out(k++) = mean[b];
  }
  return out;
}

Matrix monotone_index(const LinkedSample& s, const MqGridFit& grid) {
  const int G = static_cast<int>(grid.fits.size());
  Matrix Q(s.size(), G);
  for (int k = 0; k < G; ++k) Q.col(k) = s.X * grid.fits[k].beta;
  for (int j = 0; j < s.size(); ++j) Q.row(j) = isotonic_increasing(Q.row(j).transpose()).transpose();
  return Q;
}

MqCoefficients mq_coefficients(const LinkedSample& s, const MqGridFit& grid, const MqConfig& cfg) {
  const int G = static_cast<int>(grid.fits.size());
  const Matrix Q = monotone_index(s, grid);
  MqCoefficients out;
  out.tau_starstar.resize(s.size());
  out.tau_star.resize(s.size());
  out.clamped.assign(s.size(), false);
  for (int j = 0; j < s.size(); ++j) {
    const double y = s.y_star(j);
    double t;
    if (y <= Q(j, 0)) {
      t = grid.fits[0].tau;
      out.clamped[j] = y < Q(j, 0);
    } else if (y >= Q(j, G - 1)) {
      t = grid.fits[G - 1].tau;
      out.clamped[j] = y > Q(j, G - 1);
    } else {
      int k = 0;
      while (Q(j, k + 1) <= y) ++k;
      const double t0 = grid.fits[k].tau, t1 = grid.fits[k + 1].tau;
      t = t0 + (y - Q(j, k)) / (Q(j, k + 1) - Q(j, k)) * (t1 - t0);
    }
    out.tau_starstar(j) = t;
  }
  for (const auto& cell : s.cells) {
    if (cell.n == 0) continue;
    double centre = 0.5;
    if (cfg.correction == MqCorrection::mean) {
      centre = 0.0;
      for (int j : cell.rows) centre += out.tau_starstar(j);
      centre /= cell.n;
    }
    const double lam = effective_lambda(s.block_lambda[cell.block], cell.N);
    const double g = cell.N < 2 ? 0.0 : gamma(lam, cell.N);
    for (int j : cell.rows) out.tau_star(j) = (lam - g) * out.tau_starstar(j) + g * cell.N * centre;
  }
  out.tau_area.resize(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    if (rows.empty()) throw InputError("mq_coefficients: area without sampled units");
    double m = 0.0;
    for (int j : rows) m += out.tau_star(j);
    out.tau_area(i) = m / rows.size();
  }
  return out;
}

std::vector<MqTauFit> fit_mq_areas(const LinkedSample& s, const MqCoefficients& coef,
                                   const MqGridFit& grid, const MqConfig& cfg) {
  std::vector<MqTauFit> out;
  out.reserve(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const double tau = coef.tau_area(i);
    std::size_t near = 0;
    for (std::size_t k = 1; k < grid.fits.size(); ++k) {
      if (std::abs(grid.fits[k].tau - tau) < std::abs(grid.fits[near].tau - tau)) near = k;
    }
    try {
      out.push_back(fit_mq_tau(s, tau, cfg, &grid.fits[near]));
    } catch (const NumericalError&) {
      MqTauFit fb = grid.fits[near];
      fb.converged = false;
      out.push_back(fb);
    }
  }
  return out;
}

std::vector<AreaPrediction> predict_means_mq_star(const LinkedSample& s, const std::vector<MqTauFit>& fits) {
  std::vector<AreaPrediction> out(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& a = s.areas[i];
    out[i].area = i;
    out[i].estimator = "mq-star";
    const double rest = a.N > a.n ? a.xbar_r_star.dot(fits[i].beta) : 0.0;
    out[i].point = (a.n * a.ybar_star + (a.N - a.n) * rest) / a.N;
  }
  return out;
}

std::vector<MqMse> mse_mq_star(const LinkedSample& s, const MqCoefficients& coef,
                               const std::vector<MqTauFit>& fits, const MqConfig& cfg) {
  const int n = s.size();
  const int p = s.p();
  const double c = cfg.c;

  // Fitted values of each unit under its own area's coefficient.
  Vector mu(n);
  for (int j = 0; j < n; ++j) mu(j) = s.X_star.row(j).dot(fits[s.area_of[j]].beta);
  const double ss = (s.y_star - mu).squaredNorm();

  std::vector<MqMse> out(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& a = s.areas[i];
    const MqTauFit& f = fits[i];
    const double tau = f.tau;
    const Vector ups = linkage_variances(s, f.beta).array() + f.sigma2;
    const Vector e = s.y_star - s.X_star * f.beta;

    Vector wpsi(n), wphi(n), wt(n), dw(n);
    for (int j = 0; j < n; ++j) {
      const double r = e(j) / std::sqrt(ups(j));
      const double tilt = 2.0 * (r < 0.0 ? 1.0 - tau : tau);
      wpsi(j) = tilt * huber_psi_prime(r, c) / ups(j);
      wphi(j) = std::pow(mq_psi(r, tau, c), 2) / ups(j);
      wt(j) = mq_weight(r, tau, c) / ups(j);
      const double sgn = std::abs(r) < 1e-10 ? (r < 0.0 ? -1.0 : 1.0) : std::abs(huber_psi(r, c)) / r;
      dw(j) = 2.0 * sgn / ups(j);
    }
    const Matrix Hpsi = s.X_star.transpose() * wpsi.asDiagonal() * s.X_star;
    const Matrix Hphi = s.X_star.transpose() * wphi.asDiagonal() * s.X_star;
    const Matrix Hpsi_inv = Hpsi.completeOrthogonalDecomposition().pseudoInverse();
    const Matrix Vbeta = static_cast<double>(n) / (n - p) * Hpsi_inv * Hphi * Hpsi_inv.transpose();

    MqMse& m = out[i];
    const double f2 = std::pow(1.0 - static_cast<double>(a.n) / a.N, 2);
    if (a.N > a.n) {
      m.variance = f2 * (a.xbar_r_star.dot(Vbeta * a.xbar_r_star) + ss / ((a.N - a.n) * (n - 1.0)));
    }

    // Pseudo-linear weights of the area predictor.
    const Matrix H = s.X_star.transpose() * wt.asDiagonal() * s.X_star;
    Eigen::LDLT<Matrix> Hs(H);
    const Vector L = s.X_star.transpose() * wt.asDiagonal() * s.y_star;
    Vector w = wt.asDiagonal() * (s.X_star * Hs.solve((a.N - a.n) * a.xbar_r_star));
    for (int j : a.rows) w(j) += 1.0;
    const double bias = (w.dot(mu) - a.N * a.xbar.dot(f.beta)) / a.N;
    m.bias2 = bias * bias;

    // Contribution of the estimated area coefficient.
    const Matrix dH = s.X_star.transpose() * dw.asDiagonal() * s.X_star;
    const Vector dL = s.X_star.transpose() * dw.asDiagonal() * s.y_star;
    const Vector G = Hs.solve(dL - dH * Hs.solve(L));  // d beta / d tau
    double v2 = 0.0;
    for (int j : a.rows) v2 += std::pow(coef.tau_star(j) - coef.tau_area(i), 2);
    v2 /= a.rows.size();
    // Delta method through the non-sampled part of the predictor; the area
    // coefficient is a mean of a.n unit coefficients.
    m.v_tau = f2 * std::pow(a.xbar_r_star.dot(G), 2) * v2 / a.n;

    m.variance = std::max(m.variance, 0.0);
    m.total = m.variance + m.bias2 + m.v_tau;
  }
  return out;
}

MqStarFit fit_mq_star(const LinkedSample& s, const MqConfig& cfg) {
  MqStarFit r;
  r.grid = fit_mq_grid(s, cfg);
  r.coef = mq_coefficients(s, r.grid, cfg);
  r.area_fits = fit_mq_areas(s, r.coef, r.grid, cfg);
  return r;
}

}  // namespace sae
