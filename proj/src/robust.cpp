#include "sae/robust.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sae {

double huber_psi(double u, double c) {
  if (u > c) return c;
  if (u < -c) return -c;
  return u;
}

double huber_psi_prime(double u, double c) { return std::abs(u) < c ? 1.0 : 0.0; }

double huber_weight(double u, double c) {
  if (std::abs(u) < 1e-10) return 1.0;
  return huber_psi(u, c) / u;
}

double huber_K(double c) {
  const double Phi = 0.5 * std::erfc(-c / std::sqrt(2.0));
  const double phi = std::exp(-0.5 * c * c) / std::sqrt(2.0 * M_PI);
  return (2.0 * Phi - 1.0) - 2.0 * c * phi + 2.0 * c * c * (1.0 - Phi);
}

namespace {

Matrix solve_or_pinv(const Matrix& A, const Matrix& B) {
  Eigen::FullPivLU<Matrix> lu(A);
  if (lu.isInvertible() && lu.rcond() > 1e-14) return lu.solve(B);
  return A.completeOrthogonalDecomposition().pseudoInverse() * B;
}

// Marginal quantities of one area at (beta, delta, v).
struct AreaState {
  Matrix S;      // Sigma^-1
  Vector sqrtU;  // sqrt(diag Sigma)
  Vector resid;  // y* - X* beta
  Vector r;      // resid / sqrtU
  Vector psi;    // psi(r)
};

std::vector<AreaState> area_states(const LinkedSample& s, const Vector& beta,
                                   const std::vector<AreaCovariance>& cov, double c) {
  std::vector<AreaState> out(s.num_areas());
  const Vector res = s.y_star - s.X_star * beta;
  for (int i = 0; i < s.num_areas(); ++i) {
    auto& st = out[i];
    st.S = cov[i].sigma_inv;
    st.sqrtU = cov[i].sigma.diagonal().cwiseSqrt();
    st.resid = take(res, s.areas[i].rows);
    st.r = st.resid.cwiseQuotient(st.sqrtU);
    st.psi = st.r.unaryExpr([c](double x) { return huber_psi(x, c); });
  }
  return out;
}

// IRLS for the beta equations with the covariance held fixed.
Vector solve_beta(const LinkedSample& s, const std::vector<AreaCovariance>& cov, Vector beta, double c) {
  const int p = s.p();
  for (int it = 0; it < 200; ++it) {
    const auto st = area_states(s, beta, cov, c);
    Matrix lhs = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    for (int i = 0; i < s.num_areas(); ++i) {
      const auto& rows = s.areas[i].rows;
      const Matrix Xi = take_rows(s.X_star, rows);
      const Vector w = st[i].r.unaryExpr([c](double x) { return huber_weight(x, c); });
      // U^1/2 W U^-1/2 = W for diagonal U and W.
      const Matrix G = st[i].S * w.asDiagonal();
      lhs.noalias() += Xi.transpose() * G * Xi;
      rhs.noalias() += Xi.transpose() * G * take(s.y_star, rows);
    }
    const Vector next = solve_or_pinv(lhs, rhs);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (change < 1e-12 * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

struct DeltaSystem {
  Matrix A = Matrix::Zero(2, 2);
  Vector a = Vector::Zero(2);
  Vector cv = Vector::Zero(2);
  Vector phi = Vector::Zero(2);    // equation values
  Vector scale = Vector::Ones(2);  // 1 + sum of absolute term sizes
};

DeltaSystem delta_system(const LinkedSample& s, const Vector& beta, const VarianceComponents& delta,
                         const Vector& v, double c, double K, Matrix* per_area = nullptr) {
  const auto cov = area_covariances(s, delta, v);
  const auto st = area_states(s, beta, cov, c);
  DeltaSystem d;
  if (per_area) *per_area = Matrix::Zero(s.num_areas(), 2);
  for (int i = 0; i < s.num_areas(); ++i) {
    const Matrix& S = st[i].S;
    const Vector Spsi = S * st[i].sqrtU.cwiseProduct(st[i].psi);
    const Vector S1 = S.rowwise().sum();
    const Vector vi = take(v, s.areas[i].rows);
    const double au = Spsi.sum() * Spsi.sum();
    const double ae = Spsi.squaredNorm();
    const double tu = S1.sum();
    const double te = S.trace();
    d.a += Vector{{au, ae}};
    d.A(0, 0) += K * tu * tu;
    d.A(0, 1) += K * S1.squaredNorm();
    d.A(1, 1) += K * S.squaredNorm();
    d.cv(0) += K * vi.dot(S1.cwiseAbs2());
    d.cv(1) += K * vi.dot(S.colwise().squaredNorm().transpose());
    d.phi += Vector{{au - K * tu, ae - K * te}};
    d.scale += Vector{{au + K * tu, ae + K * te}};
    if (per_area) per_area->row(i) << au - K * tu, ae - K * te;
  }
  d.A(1, 0) = d.A(0, 1);
  return d;
}

// `pinned`: -1 when both components are free, otherwise the index of the
// component held at its lower bound, whose equation is then dropped.
double delta_norm(const DeltaSystem& d, int pinned) {
  const Vector rel = d.phi.cwiseAbs().cwiseQuotient(d.scale);
  return pinned < 0 ? rel.maxCoeff() : rel(1 - pinned);
}

// Fellner-type equation for one area effect:
// sum_j psi((e_j - u)/s_j)/s_j - psi(u/sigma_u)/sigma_u, decreasing in u.
struct AreaEffectEquation {
  Vector e;  // y* - X* beta over the area
  Vector s;  // sqrt(sigma2_e + v_j)
  double su; // sqrt(sigma2_u); infinite drops the penalty on u
  double c;

  double value(double u, double* abs_sum = nullptr) const {
    double f = 0.0;
    double a = 0.0;
    for (int j = 0; j < e.size(); ++j) {
      const double t = huber_psi((e(j) - u) / s(j), c) / s(j);
      f += t;
      a += std::abs(t);
    }
    const double pen = huber_psi(u / su, c) / su;
    if (abs_sum) *abs_sum = a + std::abs(pen);
    return f - pen;
  }

  double solve() const {
    double lo = e.minCoeff();
    double hi = e.maxCoeff();
    double width = 1.0 + (hi - lo) + c * (s.maxCoeff() + (std::isfinite(su) ? su : 0.0));
    while (value(lo) < 0.0) lo -= width, width *= 2.0;
    width = 1.0 + (hi - lo);
    while (value(hi) > 0.0) hi += width, width *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (value(mid) > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return 0.5 * (lo + hi);
  }
};

AreaEffectEquation area_effect_equation(const LinkedSample& s, const Vector& beta, const Vector& v,
                                        const VarianceComponents& delta, int i, double c) {
  const auto& rows = s.areas[i].rows;
  AreaEffectEquation eq;
  eq.e = take(s.y_star, rows) - take_rows(s.X_star, rows) * beta;
  eq.s = (take(v, rows).array() + delta.sigma2_e).sqrt().matrix();
  eq.su = std::sqrt(delta.sigma2_u);
  eq.c = c;
  return eq;
}

constexpr double kTinySigmaU = 1e-12;
constexpr double kSigmaEFloor = 1e-8;

int pinned_component(const VarianceComponents& delta) {
  if (delta.sigma2_u <= kTinySigmaU) return 0;
  if (delta.sigma2_e <= kSigmaEFloor) return 1;
  return -1;
}

}  // namespace

Vector robust_equation_norms(const LinkedSample& s, const Vector& beta, const Vector& u,
                             const VarianceComponents& delta, double c) {
  const Vector v = linkage_variances(s, beta);
  const auto cov = area_covariances(s, delta, v);
  const auto st = area_states(s, beta, cov, c);
  const int p = s.p();
  Vector hb = Vector::Zero(p);
  Vector hb_abs = Vector::Ones(p);
  for (int i = 0; i < s.num_areas(); ++i) {
    const Matrix Xi = take_rows(s.X_star, s.areas[i].rows);
    const Matrix XS = Xi.transpose() * st[i].S * st[i].sqrtU.asDiagonal();
    hb += XS * st[i].psi;
    hb_abs += XS.cwiseAbs() * st[i].psi.cwiseAbs();
  }
  double nu = 0.0;
  if (delta.sigma2_u > kTinySigmaU) {
    for (int i = 0; i < s.num_areas(); ++i) {
      double abs_sum = 0.0;
      const double f = area_effect_equation(s, beta, v, delta, i, c).value(u(i), &abs_sum);
      nu = std::max(nu, std::abs(f) / (1.0 + abs_sum));
    }
  }
  const DeltaSystem d = delta_system(s, beta, delta, v, c, huber_K(c));
  return Vector{{hb.cwiseAbs().cwiseQuotient(hb_abs).maxCoeff(), nu,
                 delta_norm(d, pinned_component(delta))}};
}

RobustFit fit_reblup_star(const LinkedSample& s, const RobustConfig& cfg) {
  if (!(cfg.c > 0.0)) throw InputError("fit_reblup_star: Huber constant must be positive");
  if (s.size() <= s.p()) throw InputError("fit_reblup_star: need more sample rows than covariates");
  const double c = cfg.c;
  const double K = huber_K(c);

  Vector beta;
  VarianceComponents delta;
  try {
    const MixedFit start = fit_lmm_linked(s);
    beta = start.beta;
    delta = start.delta;
  } catch (const NumericalError&) {
    beta = (s.X_star.transpose() * s.X_star).ldlt().solve(s.X_star.transpose() * s.y_star);
    const Vector e = s.y_star - s.X_star * beta;
    delta = {0.0, e.squaredNorm() / (s.size() - s.p())};
  }
  {
    // Gaussian variance components are inflated by gross outliers; rescale
    // their sum to the MAD of the starting residuals.
    std::vector<double> r(s.size());
    for (int j = 0; j < s.size(); ++j) r[j] = s.y_star(j) - s.X_star.row(j).dot(beta);
    auto mid = r.begin() + r.size() / 2;
    std::nth_element(r.begin(), mid, r.end());
    const double med = *mid;
    for (double& x : r) x = std::abs(x - med);
    std::nth_element(r.begin(), mid, r.end());
    const double robust_total = std::pow(1.4826 * *mid, 2);
    const double total = delta.sigma2_u + delta.sigma2_e;
    if (robust_total > 0.0 && robust_total < total) {
      delta.sigma2_u *= robust_total / total;
      delta.sigma2_e *= robust_total / total;
    }
  }
  delta.sigma2_u = std::max(delta.sigma2_u, 0.05 * delta.sigma2_e);

  bool boundary = false;
  double change = INFINITY;
  int it = 0;
  for (it = 1; it <= cfg.max_iter; ++it) {
    const Vector v = linkage_variances(s, beta);
    const Vector beta_new = solve_beta(s, area_covariances(s, delta, v), beta, c);
    const Vector v_new = linkage_variances(s, beta_new);

    const DeltaSystem d0 = delta_system(s, beta_new, delta, v_new, c, K);
    const Vector cur = delta.as_vector();
    Vector target = solve_or_pinv(d0.A, d0.a - d0.cv);
    int pinned = -1;
    if (target(0) <= 0.0) {
      pinned = 0;
      target(0) = 0.0;
      target(1) = (d0.a(1) - d0.cv(1)) / d0.A(1, 1);
    }
    if (target(1) <= kSigmaEFloor) {
      // Linkage variance absorbs the unit-level scale.
      target(1) = kSigmaEFloor;
      if (pinned < 0) {
        pinned = 1;
        target(0) = std::max((d0.a(0) - d0.cv(0) - d0.A(0, 1) * kSigmaEFloor) / d0.A(0, 0), 0.0);
      }
    }
    const bool bnd = pinned == 0;

    // Step halving on the equation norm.
    const double norm0 = delta_norm(d0, pinned);
    Vector step = target - cur;
    Vector next = target;
    bool decreased = false;
    for (int h = 0; h < 10 && !decreased; ++h) {
      next = cur + step;
      next(0) = std::max(next(0), 0.0);
      next(1) = std::max(next(1), kSigmaEFloor);
      const DeltaSystem d1 = delta_system(s, beta_new, VarianceComponents::from_vector(next), v_new, c, K);
      decreased = delta_norm(d1, pinned) <= norm0 || norm0 < 1e-14;
      step *= 0.5;
    }
    if (!decreased) next = target;  // plain fixed-point step
    boundary = bnd;
    change = std::max((beta_new - beta).cwiseAbs().maxCoeff() / (1.0 + beta.cwiseAbs().maxCoeff()),
                      (next - cur).cwiseAbs().maxCoeff() / (1.0 + cur.cwiseAbs().maxCoeff()));
    beta = beta_new;
    delta = VarianceComponents::from_vector(next);
    if (change < cfg.tol) break;
  }
  if (it > cfg.max_iter) throw ConvergenceError("fit_reblup_star: no convergence", cfg.max_iter, change);
  if (boundary) delta.sigma2_u = 0.0;

  // Final beta at the returned delta, then the area effects.
  beta = solve_beta(s, area_covariances(s, delta, linkage_variances(s, beta)), beta, c);
  RobustFit fit;
  fit.beta = beta;
  fit.delta = delta;
  fit.c = c;
  fit.K = K;
  fit.boundary = boundary || delta.sigma2_u <= kTinySigmaU;
  fit.iterations = it;
  fit.v_diag = linkage_variances(s, beta);
  fit.sigma = area_covariances(s, delta, fit.v_diag);
  fit.u = Vector::Zero(s.num_areas());
  fit.w3 = Vector::Ones(s.num_areas());
  fit.w2.resize(s.size());
  for (int i = 0; i < s.num_areas(); ++i) {
    const AreaEffectEquation eq = area_effect_equation(s, beta, fit.v_diag, delta, i, c);
    if (!fit.boundary) {
      fit.u(i) = eq.solve();
      fit.w3(i) = huber_weight(fit.u(i) / eq.su, c);
    }
    const auto& rows = s.areas[i].rows;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      fit.w2(rows[k]) = huber_weight((eq.e(k) - fit.u(i)) / eq.s(k), c);
    }
  }
  fit.residual_norms = robust_equation_norms(s, fit.beta, fit.u, fit.delta, c);
  return fit;
}

std::vector<AreaPrediction> predict_means_reblup_star(const RobustFit& fit, const LinkedSample& s) {
  std::vector<AreaPrediction> out(s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    const auto& a = s.areas[i];
    out[i].area = i;
    out[i].estimator = "reblup-star";
    const double rest = a.N > a.n ? a.xbar_r_star.dot(fit.beta) + fit.u(i) : 0.0;
    out[i].point = (a.n * a.ybar_star + (a.N - a.n) * rest) / a.N;
  }
  return out;
}

namespace {

struct SandwichParts {
  Vector t;     // standardized conditional residuals
  Vector sres;  // sqrt(sigma2_e + v)
  std::vector<AreaState> st;
};

SandwichParts sandwich_parts(const RobustFit& fit, const LinkedSample& s) {
  SandwichParts sp;
  sp.st = area_states(s, fit.beta, fit.sigma, fit.c);
  sp.sres = (fit.v_diag.array() + fit.delta.sigma2_e).sqrt().matrix();
  sp.t.resize(s.size());
  const Vector res = s.y_star - s.X_star * fit.beta;
  for (int j = 0; j < s.size(); ++j) sp.t(j) = (res(j) - fit.u(s.area_of[j])) / sp.sres(j);
  return sp;
}

}  // namespace

Matrix sandwich_bread(const RobustFit& fit, const LinkedSample& s) {
  const int p = s.p();
  const int D = s.num_areas();
  const SandwichParts sp = sandwich_parts(fit, s);
  Matrix J = Matrix::Zero(p + D, p + D);
  for (int i = 0; i < D; ++i) {
    const auto& rows = s.areas[i].rows;
    const Matrix Xi = take_rows(s.X_star, rows);
    const Vector R = sp.st[i].r.unaryExpr([&](double x) { return huber_psi_prime(x, fit.c); });
    J.topLeftCorner(p, p) -= Xi.transpose() * sp.st[i].S * R.asDiagonal() * Xi;
    double tuu = 0.0;
    RowVector tub = RowVector::Zero(p);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int j = rows[k];
      const double T = huber_psi_prime(sp.t(j), fit.c) / (sp.sres(j) * sp.sres(j));
      tuu += T;
      tub += T * Xi.row(k);
    }
    if (fit.boundary) {
      J(p + i, p + i) = -1.0;  // u_i is fixed at zero
      continue;
    }
    const double su = std::sqrt(fit.delta.sigma2_u);
    const double C = huber_psi_prime(fit.u(i) / su, fit.c);
    J(p + i, p + i) = -tuu - C / fit.delta.sigma2_u;
    J.block(p + i, 0, 1, p) = -tub;
  }
  return J;
}

Matrix sandwich_meat(const RobustFit& fit, const LinkedSample& s) {
  const int p = s.p();
  const int D = s.num_areas();
  const int n = s.size();
  const SandwichParts sp = sandwich_parts(fit, s);
  double k_rr = 0.0, k_tt = 0.0, k_rt = 0.0;
  for (int i = 0; i < D; ++i) {
    const auto& rows = s.areas[i].rows;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double pr = sp.st[i].psi(k);
      const double pt = huber_psi(sp.t(rows[k]), fit.c);
      k_rr += pr * pr;
      k_tt += pt * pt;
      k_rt += pr * pt;
    }
  }
  const double df = 1.0 / (n - p);
  k_rr *= df;
  k_tt *= df;
  k_rt *= df;

  Matrix M = Matrix::Zero(p + D, p + D);
  for (int i = 0; i < D; ++i) {
    const auto& rows = s.areas[i].rows;
    const Matrix Xi = take_rows(s.X_star, rows);
    const Matrix& S = sp.st[i].S;
    const Vector U = sp.st[i].sqrtU.cwiseAbs2();
    M.topLeftCorner(p, p) += k_rr * Xi.transpose() * S * U.asDiagonal() * S * Xi;
    if (fit.boundary) continue;
    const Vector sr = take(sp.sres, rows);
    M(p + i, p + i) = k_tt * sr.cwiseAbs2().cwiseInverse().sum();
    const Vector cross = k_rt * Xi.transpose() * S * sp.st[i].sqrtU.cwiseQuotient(sr);
    M.block(0, p + i, p, 1) = cross;
    M.block(p + i, 0, 1, p) = cross.transpose();
  }
  return M;
}

Matrix sandwich_cov(const RobustFit& fit, const LinkedSample& s) {
  const Matrix J = sandwich_bread(fit, s);
  const Matrix M = sandwich_meat(fit, s);
  const Matrix Jinv = solve_or_pinv(J, Matrix::Identity(J.rows(), J.cols()));
  Matrix V = Jinv * M * Jinv.transpose();
  if (fit.boundary) {
    V.bottomRows(s.num_areas()).setZero();
    V.rightCols(s.num_areas()).setZero();
  }
  return 0.5 * (V + V.transpose());
}

Matrix robust_delta_contributions(const LinkedSample& s, const Vector& beta,
                                  const VarianceComponents& delta, double c) {
  Matrix per_area;
  delta_system(s, beta, delta, linkage_variances(s, beta), c, huber_K(c), &per_area);
  return per_area;
}

Matrix v_delta_robust(const RobustFit& fit, const LinkedSample& s) {
  const Vector d0 = fit.delta.as_vector();
  const Matrix H = robust_delta_contributions(s, fit.beta, fit.delta, fit.c);
  Matrix J(2, 2);
  for (int k = 0; k < 2; ++k) {
    const double h = 1e-5 * (1.0 + std::abs(d0(k)));
    Vector lo = d0, hi = d0;
    hi(k) += h;
    lo(k) -= h;
    double width = 2.0 * h;
    if (lo(k) < 0.0) {
      lo(k) = d0(k);
      width = h;
    }
    const Vector fhi = robust_delta_contributions(s, fit.beta, VarianceComponents::from_vector(hi), fit.c)
                           .colwise().sum().transpose();
    const Vector flo = robust_delta_contributions(s, fit.beta, VarianceComponents::from_vector(lo), fit.c)
                           .colwise().sum().transpose();
    J.col(k) = (fhi - flo) / width;
  }
  const Matrix M = H.transpose() * H;
  Matrix V = Matrix::Zero(2, 2);
  if (fit.boundary) {
    V(1, 1) = M(1, 1) / (J(1, 1) * J(1, 1));
  } else {
    const Matrix Jinv = solve_or_pinv(J, Matrix::Identity(2, 2));
    V = Jinv * M * Jinv.transpose();
  }
  return 0.5 * (V + V.transpose());
}

namespace {

// B_i: weights turning the area's conditional residuals into u_i, for
// variance components `delta`, holding beta and u fixed.
RowVector area_effect_weights(const RobustFit& fit, const LinkedSample& s, int i,
                              const VarianceComponents& delta) {
  const auto& rows = s.areas[i].rows;
  RowVector B = RowVector::Zero(rows.size());
  if (delta.sigma2_u <= kTinySigmaU) return B;
  const Vector e = take(s.y_star, rows) - take_rows(s.X_star, rows) * fit.beta;
  double denom = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double s2 = delta.sigma2_e + fit.v_diag(rows[k]);
    const double w2 = huber_weight((e(k) - fit.u(i)) / std::sqrt(s2), fit.c);
    B(k) = w2 / s2;
    denom += B(k);
  }
  denom += huber_weight(fit.u(i) / std::sqrt(delta.sigma2_u), fit.c) / delta.sigma2_u;
  return B / denom;
}

}  // namespace

std::vector<ReblupMse> mse_reblup_star(const RobustFit& fit, const LinkedSample& s, const RobustConfig& cfg) {
  const int p = s.p();
  const int D = s.num_areas();
  const int n = s.size();
  const Matrix Vtheta = sandwich_cov(fit, s);
  const Matrix Vdelta = v_delta_robust(fit, s);

  // Pooled squared conditional residuals.
  const Vector res = s.y_star - s.X_star * fit.beta;
  double ss = 0.0;
  for (int j = 0; j < n; ++j) ss += std::pow(res(j) - fit.u(s.area_of[j]), 2);

  // Pseudo-linear representation: beta = A_beta y*, u_i = B_i (y*_i - X*_i A_beta y*).
  const auto st = area_states(s, fit.beta, fit.sigma, fit.c);
  Matrix XtGX = Matrix::Zero(p, p);
  Matrix XtG = Matrix::Zero(p, n);
  for (int i = 0; i < D; ++i) {
    const auto& rows = s.areas[i].rows;
    const Matrix Xi = take_rows(s.X_star, rows);
    const Vector w1 = st[i].r.unaryExpr([&](double x) { return huber_weight(x, fit.c); });
    const Matrix XG = Xi.transpose() * st[i].S * w1.asDiagonal();
    XtGX += XG * Xi;
    for (std::size_t k = 0; k < rows.size(); ++k) XtG.col(rows[k]) = XG.col(k);
  }
  const Matrix Abeta = solve_or_pinv(XtGX, XtG);
  // mu must be conditionally unbiased, so the area effects entering it are
  // the unpenalized robust area means of the residuals.
  Vector u_free(D), u_free_var(D);
  for (int i = 0; i < D; ++i) {
    AreaEffectEquation eq = area_effect_equation(s, fit.beta, fit.v_diag, fit.delta, i, fit.c);
    eq.su = std::numeric_limits<double>::infinity();
    u_free(i) = eq.solve();
    double num = 0.0, den = 0.0;
    for (int k = 0; k < eq.e.size(); ++k) {
      const double t = (eq.e(k) - u_free(i)) / eq.s(k);
      num += std::pow(huber_psi(t, fit.c) / eq.s(k), 2);
      den += huber_psi_prime(t, fit.c) / (eq.s(k) * eq.s(k));
    }
    u_free_var(i) = den > 0.0 ? num / (den * den) : 0.0;
  }
  const Vector mu = s.X_star * fit.beta + Vector::NullaryExpr(n, [&](Eigen::Index j) {
                      return u_free(s.area_of[j]);
                    });

  std::vector<ReblupMse> out(D);
  for (int i = 0; i < D; ++i) {
    const auto& a = s.areas[i];
    const auto& rows = a.rows;
    const double f = 1.0 - static_cast<double>(a.n) / a.N;
    ReblupMse& m = out[i];

    Vector l = Vector::Zero(p + D);
    l.head(p) = a.xbar_r_star;
    l(p + i) = 1.0;
    m.h1 = f * f * l.dot(Vtheta * l);
    if (a.N > a.n) {
      const double dfres = cfg.h2_area_df ? std::max(1, a.n - 1) : (n - 1);
      m.h2 = f * f * ss / ((a.N - a.n) * dfres);
    }

    // Pseudo-linearization bias.
    const RowVector B = area_effect_weights(fit, s, i, fit.delta);
    RowVector Au = -B * take_rows(s.X_star, rows) * Abeta;
    for (std::size_t k = 0; k < rows.size(); ++k) Au(rows[k]) += B(k);
    RowVector w = (a.N - a.n) * (a.xbar_r_star.transpose() * Abeta + Au);
    for (int j : rows) w(j) += 1.0;
    w /= a.N;
    const double bias = w.dot(mu) - (a.xbar.dot(fit.beta) + u_free(i));
    // The plug-in square overstates the squared bias by the variance of
    // the unpenalized area effect it carries.
    double wi = -1.0;
    for (int j : rows) wi += w(j);
    m.bias2 = std::max(bias * bias - wi * wi * u_free_var(i), 0.0);

    // h3 from finite-difference derivatives of B_i in delta.
    if (!fit.boundary) {
      const Vector d0 = fit.delta.as_vector();
      Matrix dB(2, rows.size());
      for (int k = 0; k < 2; ++k) {
        const double h = 1e-5 * (1.0 + std::abs(d0(k)));
        Vector hi = d0, lo = d0;
        hi(k) += h;
        // One-sided next to the lower bound.
        const double down = d0(k) > h ? h : 0.0;
        lo(k) -= down;
        dB.row(k) = (area_effect_weights(fit, s, i, VarianceComponents::from_vector(hi)) -
                     area_effect_weights(fit, s, i, VarianceComponents::from_vector(lo))) /
                    (h + down);
      }
      Matrix mid = Matrix::Constant(rows.size(), rows.size(), fit.u(i) * fit.u(i));
      for (std::size_t k = 0; k < rows.size(); ++k) mid(k, k) += fit.delta.sigma2_e + fit.v_diag(rows[k]);
      const Matrix Omega = dB * mid * dB.transpose();
      const double zr = static_cast<double>(a.N - a.n) / a.N;
      m.h3 = zr * zr * (Omega.cwiseProduct(Vdelta)).sum();
    }
    m.h1 = std::max(m.h1, 0.0);
    m.h3 = std::max(m.h3, 0.0);
    m.total = m.h1 + m.h2 + m.h3 + m.bias2;
  }
  return out;
}

}  // namespace sae
