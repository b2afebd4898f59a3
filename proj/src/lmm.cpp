#include "sae/lmm.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>

namespace sae {

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(k) = m.row(rows[k]);
  return out;
}

Vector take(const Vector& v, const std::vector<int>& rows) {
  Vector out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out(k) = v(rows[k]);
  return out;
}

std::vector<AreaCovariance> area_covariances(const LinkedSample& s, const VarianceComponents& delta,
                                             const Vector& v) {
  std::vector<AreaCovariance> out(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    const int ni = static_cast<int>(rows.size());
    Matrix sig = Matrix::Constant(ni, ni, delta.sigma2_u);
    for (int k = 0; k < ni; ++k) sig(k, k) += delta.sigma2_e + v(rows[k]);
    Eigen::LLT<Matrix> llt(sig);
    if (llt.info() != Eigen::Success) throw NumericalError("area covariance is not positive definite");
    out[i].sigma_inv = llt.solve(Matrix::Identity(ni, ni));
    out[i].sigma = std::move(sig);
  }
  return out;
}

namespace {

// Pieces of the (restricted) likelihood shared by the scoring step, the
// information matrix and the certificates.
struct GlsState {
  std::vector<AreaCovariance> cov;
  Vector beta;
  Matrix xtsx_inv;
  std::vector<Matrix> F;   // Sigma_i^-1 X*_i
  std::vector<Vector> Py;  // Sigma_i^-1 (y_i - X*_i beta)
};

GlsState gls(const LinkedSample& s, const VarianceComponents& delta, const Vector& v) {
  GlsState g;
  g.cov = area_covariances(s, delta, v);
  const int p = s.p();
  Matrix xtsx = Matrix::Zero(p, p);
  Vector xtsy = Vector::Zero(p);
  g.F.resize(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    const Matrix Xi = take_rows(s.X_star, rows);
    g.F[i] = g.cov[i].sigma_inv * Xi;
    xtsx.noalias() += Xi.transpose() * g.F[i];
    xtsy.noalias() += g.F[i].transpose() * take(s.y_star, rows);
  }
  Eigen::LDLT<Matrix> ldlt(xtsx);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    throw NumericalError("GLS normal equations are singular");
  }
  g.xtsx_inv = ldlt.solve(Matrix::Identity(p, p));
  g.beta = g.xtsx_inv * xtsy;
  g.Py.resize(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    g.Py[i] = g.cov[i].sigma_inv * (take(s.y_star, rows) - take_rows(s.X_star, rows) * g.beta);
  }
  return g;
}

// d Sigma_i / d delta_l times a matrix, l = 0 (sigma2_u, 1 1') or 1 (sigma2_e, I).
Matrix dsigma_times(int l, const Matrix& m) {
  if (l == 1) return m;
  return Matrix::Ones(m.rows(), 1) * m.colwise().sum();
}

struct ScoreInfo {
  Vector score;
  Matrix info;
};

ScoreInfo score_and_info(const LinkedSample& s, const GlsState& g, VarianceMethod method) {
  const int p = s.p();
  Vector score = Vector::Zero(2);
  Matrix info = Matrix::Zero(2, 2);
  Matrix A[2] = {Matrix::Zero(p, p), Matrix::Zero(p, p)};  // F' D_l F
  Matrix Bkl[2][2];                                         // F' D_k S D_l F
  for (auto& r : Bkl)
    for (auto& m : r) m = Matrix::Zero(p, p);

  for (int i = 0; i < s.num_areas(); ++i) {
    const Matrix& S = g.cov[i].sigma_inv;
    const Vector& Py = g.Py[i];
    Matrix SD[2] = {dsigma_times(0, S).transpose(), S};  // S D_l (D_l symmetric)
    for (int l = 0; l < 2; ++l) {
      const Vector DPy = dsigma_times(l, Py);
      score(l) += 0.5 * Py.dot(DPy) - 0.5 * SD[l].trace();
      for (int k = 0; k < 2; ++k) info(k, l) += 0.5 * (SD[k] * SD[l]).trace();
      if (method == VarianceMethod::reml) {
        A[l].noalias() += g.F[i].transpose() * dsigma_times(l, g.F[i]);
        for (int k = 0; k < 2; ++k) {
          Bkl[k][l].noalias() += dsigma_times(k, g.F[i]).transpose() * (S * dsigma_times(l, g.F[i]));
        }
      }
    }
  }
  if (method == VarianceMethod::reml) {
    const Matrix& M = g.xtsx_inv;
    for (int l = 0; l < 2; ++l) {
      score(l) += 0.5 * (M * A[l]).trace();
      for (int k = 0; k < 2; ++k) {
        info(k, l) += -(M * Bkl[k][l]).trace() + 0.5 * (M * A[k] * M * A[l]).trace();
      }
    }
  }
  return {score, info};
}

Matrix pseudo_inverse_sym(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  const Vector& ev = es.eigenvalues();
  const double cut = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vector inv = Vector::Zero(ev.size());
  for (int k = 0; k < ev.size(); ++k) {
    if (ev(k) > cut) inv(k) = 1.0 / ev(k);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

VarianceComponents initial_delta(const LinkedSample& s, const Vector& beta) {
  const Vector e = s.y_star - s.X_star * beta;
  const int D = s.num_areas();
  double within = 0.0;
  Vector means(D);
  for (int i = 0; i < D; ++i) {
    const auto& rows = s.areas[i].rows;
    double m = 0.0;
    for (int j : rows) m += e(j);
    m /= rows.size();
    means(i) = m;
    for (int j : rows) within += (e(j) - m) * (e(j) - m);
  }
  const int n = s.size();
  double s2e = n > D ? within / (n - D) : e.squaredNorm() / std::max(1, n - 1);
  s2e = std::max(s2e, 1e-6);
  double s2u = 0.0;
  if (D > 1) {
    const double nbar = static_cast<double>(n) / D;
    s2u = (means.array() - means.mean()).square().sum() / (D - 1) - s2e / nbar;
  }
  return {std::max(s2u, 0.05 * s2e), s2e};
}

}  // namespace

MixedFit fit_lmm_linked(const LinkedSample& s, const LmmOptions& opt) {
  const int n = s.size();
  const int p = s.p();
  if (n <= p) throw InputError("fit_lmm_linked: need more sample rows than covariates");

  Vector beta = (s.X_star.transpose() * s.X_star).ldlt().solve(s.X_star.transpose() * s.y_star);
  VarianceComponents delta = opt.start ? *opt.start : initial_delta(s, beta);
  if (opt.fix_sigma2_u_zero) delta.sigma2_u = 0.0;

  MixedFit fit;
  double change = INFINITY;
  int it = 0;
  bool boundary = false;
  for (it = 1; it <= opt.max_iter; ++it) {
    const Vector v = linkage_variances(s, beta);
    const GlsState g = gls(s, delta, v);
    const ScoreInfo si = score_and_info(s, g, opt.method);

    Vector d = delta.as_vector();
    Vector step = Vector::Zero(2);
    if (opt.fix_sigma2_u_zero) {
      step(1) = si.score(1) / si.info(1, 1);
    } else {
      step = pseudo_inverse_sym(si.info) * si.score;
    }
    Vector d_new = d + step;
    boundary = false;
    if (d_new(0) <= 0.0) {
      // sigma2_u pushed out of the admissible region: hold it at zero and
      // rescore sigma2_e alone.
      d_new(0) = 0.0;
      boundary = !opt.fix_sigma2_u_zero;
      d_new(1) = d(1) + si.score(1) / si.info(1, 1);
    }
    d_new(1) = std::max(d_new(1), 1e-8);

    change = std::max((g.beta - beta).cwiseAbs().maxCoeff(), (d_new - d).cwiseAbs().maxCoeff());
    beta = g.beta;
    delta = VarianceComponents::from_vector(d_new);
    if (change < opt.tol) break;
  }
  if (it > opt.max_iter) {
    throw ConvergenceError("fit_lmm_linked: no convergence", opt.max_iter, change);
  }

  // Final state: linkage variances and GLS evaluated at the returned beta.
  fit.v_diag = linkage_variances(s, beta);
  GlsState g = gls(s, delta, fit.v_diag);
  const ScoreInfo si = score_and_info(s, g, opt.method);
  fit.beta = g.beta;
  fit.delta = delta;
  fit.sigma = std::move(g.cov);
  fit.xtsx_inv = g.xtsx_inv;
  fit.info = si.info;
  if (opt.fix_sigma2_u_zero || boundary) {
    fit.v_delta = Matrix::Zero(2, 2);
    fit.v_delta(1, 1) = 1.0 / si.info(1, 1);
  } else {
    fit.v_delta = pseudo_inverse_sym(si.info);
  }
  fit.iterations = it;
  fit.boundary = boundary;

  // Certificates at the returned beta (V evaluated at that same beta).
  Vector ne = Vector::Zero(p);
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    ne += take_rows(s.X_star, rows).transpose() * fit.sigma[i].sigma_inv *
          (take(s.y_star, rows) - take_rows(s.X_star, rows) * fit.beta);
  }
  fit.gls_residual = ne.cwiseAbs().maxCoeff() / (1.0 + fit.beta.cwiseAbs().maxCoeff());
  fit.score_residual = (boundary || opt.fix_sigma2_u_zero) ? std::abs(si.score(1))
                                                            : si.score.cwiseAbs().maxCoeff();
  return fit;
}

double lmm_log_likelihood(const LinkedSample& s, const VarianceComponents& delta,
                          const Vector& beta_for_v, VarianceMethod method) {
  const Vector v = linkage_variances(s, beta_for_v);
  const GlsState g = gls(s, delta, v);
  double ll = 0.0;
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    const Vector r = take(s.y_star, rows) - take_rows(s.X_star, rows) * g.beta;
    ll -= 0.5 * std::log(g.cov[i].sigma.determinant());
    ll -= 0.5 * r.dot(g.Py[i]);
  }
  if (method == VarianceMethod::reml) ll += 0.5 * std::log(g.xtsx_inv.determinant());
  return ll;
}

Vector predict_area_effects_star(const MixedFit& fit, const LinkedSample& s) {
  Vector u(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    const Vector r = take(s.y_star, rows) - take_rows(s.X_star, rows) * fit.beta;
    u(i) = fit.delta.sigma2_u * (fit.sigma[i].sigma_inv * r).sum();
  }
  return u;
}

Vector predict_area_effects_starstar(const MixedFit& fit, const LinkedSample& s) {
  Vector u(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& rows = s.areas[i].rows;
    const Vector r = take(s.y_star, rows) - take_rows(s.X, rows) * fit.beta;
    u(i) = fit.delta.sigma2_u * take(s.unit_lambda, rows).dot(fit.sigma[i].sigma_inv * r);
  }
  return u;
}

std::vector<AreaPrediction> predict_means_eblup(const MixedFit& fit, const LinkedSample& s,
                                                EblupVariant variant) {
  const Vector u = variant == EblupVariant::star ? predict_area_effects_star(fit, s)
                                                 : predict_area_effects_starstar(fit, s);
  std::vector<AreaPrediction> out(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& a = s.areas[i];
    out[i].area = i;
    out[i].estimator = variant == EblupVariant::star ? "eblup-star" : "eblup-starstar";
    const double rest = a.N > a.n ? a.xbar_r_star.dot(fit.beta) + u(i) : 0.0;
    out[i].point = (a.n * a.ybar_star + (a.N - a.n) * rest) / a.N;
  }
  return out;
}

namespace {

double g3_term(const Matrix& grad, const Matrix& sigma, const Matrix& v_delta) {
  return (grad * sigma * grad.transpose() * v_delta).trace();
}

// Shared by the star and star-star MSE: `l` weights the units of the area
// (ones for *, per-unit lambdas for **).
EblupMse eblup_mse_area(const MixedFit& fit, const LinkedSample& s, int i, const Vector& l,
                        bool starstar) {
  const auto& a = s.areas[i];
  const Matrix& S = fit.sigma[i].sigma_inv;
  const Matrix Xi = take_rows(s.X_star, a.rows);
  const double su = fit.delta.sigma2_u;
  const Vector ones = Vector::Ones(a.rows.size());
  const Vector Sl = S * l;
  const Vector S1 = S * ones;

  EblupMse m;
  if (starstar) {
    m.g1 = su + su * su * l.dot(Sl) - 2.0 * su * su * l.dot(S1);
  } else {
    m.g1 = su - su * su * ones.dot(S1);
  }
  const RowVector C = a.xbar.transpose() - su * Sl.transpose() * Xi;
  m.g2 = (C * fit.xtsx_inv * C.transpose())(0, 0);

  Matrix grad(2, a.rows.size());
  grad.row(0) = Sl.transpose() - su * Sl.sum() * S1.transpose();
  grad.row(1) = -su * (S * Sl).transpose();
  m.g3 = g3_term(grad, fit.sigma[i].sigma, fit.v_delta);

  const double f = 1.0 - static_cast<double>(a.n) / a.N;
  m.total = f * f * (m.g1 + m.g2 + 2.0 * m.g3);
  return m;
}

}  // namespace

std::vector<EblupMse> mse_eblup_star(const MixedFit& fit, const LinkedSample& s) {
  std::vector<EblupMse> out;
  for (int i = 0; i < s.num_areas(); ++i) {
    out.push_back(eblup_mse_area(fit, s, i, Vector::Ones(s.areas[i].rows.size()), false));
  }
  return out;
}

std::vector<EblupMse> mse_eblup_starstar(const MixedFit& fit, const LinkedSample& s) {
  std::vector<EblupMse> out;
  for (int i = 0; i < s.num_areas(); ++i) {
    out.push_back(eblup_mse_area(fit, s, i, take(s.unit_lambda, s.areas[i].rows), true));
  }
  return out;
}

RowVector area_blup_weights(const LinkedSample& s, const Vector& beta, const VarianceComponents& delta,
                            int area) {
  const Vector v = linkage_variances(s, beta);
  const auto cov = area_covariances(s, delta, v);
  return delta.sigma2_u * cov[area].sigma_inv.colwise().sum();
}

Matrix area_blup_weights_dlambda(const LinkedSample& s, const Vector& beta,
                                 const VarianceComponents& delta, int area) {
  const Vector v = linkage_variances(s, beta);
  const auto cov = area_covariances(s, delta, v);
  const auto& rows = s.areas[area].rows;
  const Matrix& S = cov[area].sigma_inv;
  const Vector S1 = S * Vector::Ones(rows.size());
  Matrix out(s.num_blocks(), rows.size());
  for (int q = 0; q < s.num_blocks(); ++q) {
    const Vector dv = take(linkage_variances_dlambda(s, beta, q), rows);
    // d(1' S) = -1' S dSigma S with dSigma = diag(dv).
    out.row(q) = -delta.sigma2_u * (S1.array() * dv.array()).matrix().transpose() * S;
  }
  return out;
}

Vector mse_g4_lambda(const MixedFit& fit, const LinkedSample& s, const std::vector<double>& var_lambda) {
  if (static_cast<int>(var_lambda.size()) != s.num_blocks()) {
    throw InputError("mse_g4_lambda: need one lambda variance per block");
  }
  Vector g4 = Vector::Zero(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const Matrix db = area_blup_weights_dlambda(s, fit.beta, fit.delta, i);
    for (int q = 0; q < s.num_blocks(); ++q) {
      g4(i) += (db.row(q) * fit.sigma[i].sigma * db.row(q).transpose())(0, 0) * var_lambda[q];
    }
  }
  return g4;
}

void add_g4(std::vector<EblupMse>& mse, const Vector& g4, const LinkedSample& s) {
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& a = s.areas[i];
    const double f = 1.0 - static_cast<double>(a.n) / a.N;
    mse[i].g4 = g4(i);
    mse[i].total += f * f * g4(i);
  }
}

}  // namespace sae
