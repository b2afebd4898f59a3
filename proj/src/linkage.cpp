#include "sae/linkage.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sae {

double gamma(double lambda, int N) {
  if (N < 2) throw InputError("gamma: degenerate cell with N < 2 (lambda must be forced to 1)");
  if (lambda < 0.0 || lambda > 1.0) throw InputError("gamma: lambda outside [0, 1]");
  return (1.0 - lambda) / (N - 1);
}

double effective_lambda(double lambda, int N) { return N < 2 ? 1.0 : lambda; }

Matrix expected_sampled_permutation(int n, int N, double lambda) {
  if (n < 0 || n > N || N < 1) throw InputError("expected_sampled_permutation: need 0 <= n <= N");
  lambda = effective_lambda(lambda, N);
  const double g = N < 2 ? 0.0 : gamma(lambda, N);
  Matrix T = Matrix::Constant(n, N, g);
  for (int j = 0; j < n; ++j) T(j, j) += lambda - g;
  return T;
}

Matrix corrected_design(const Matrix& X_s, const Vector& xbar, double lambda, int N) {
  if (xbar.size() != X_s.cols()) throw InputError("corrected_design: xbar width differs from X_s");
  lambda = effective_lambda(lambda, N);
  if (lambda == 1.0) return X_s;
  const double g = gamma(lambda, N);
  Matrix out = (lambda - g) * X_s;
  out.rowwise() += (g * N) * xbar.transpose();
  return out;
}

Vector linkage_variance_diag(const Vector& f, double fbar, double fbar2, double lambda) {
  const double spread = fbar2 - fbar * fbar;
  // Rounding can push a zero spread slightly negative.
  if (spread < -1e-10 * std::max(1.0, fbar2)) {
    throw NumericalError("linkage_variance_diag: second moment below squared mean");
  }
  if (lambda == 1.0) return Vector::Zero(f.size());
  const double s = std::max(spread, 0.0);
  return ((1.0 - lambda) * (lambda * (f.array() - fbar).square() + s)).matrix();
}

Vector linkage_variance_dlambda(const Vector& f, double fbar, double fbar2, double lambda) {
  const double s = std::max(fbar2 - fbar * fbar, 0.0);
  return ((1.0 - 2.0 * lambda) * (f.array() - fbar).square() - s).matrix();
}

int PermutationDraw::fixed_points() const {
  int count = 0;
  for (std::size_t j = 0; j < perm.size(); ++j) count += perm[j] == static_cast<int>(j);
  return count;
}

std::vector<int> uniform_derangement(int n, Rng& rng) {
  std::vector<int> p(n);
  while (true) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    bool ok = true;
    for (int j = 0; j < n && ok; ++j) ok = p[j] != j;
    if (ok) return p;
  }
}

double ele_mark_probability(int N, double lambda) {
  if (N < 2 || lambda >= 1.0) return 0.0;
  if (lambda <= 0.0) return 1.0;
  // P(unit marked | not exactly one marked), increasing in the mark probability m.
  auto marked_share = [N](double m) {
    const double single = std::pow(1.0 - m, N - 1);
    return m * (1.0 - single) / (1.0 - N * m * single);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    const double mid = 0.5 * (lo + hi);
    (marked_share(mid) < 1.0 - lambda ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

PermutationDraw sample_ele_permutation(int N, double lambda, Rng& rng) {
  if (N < 1) throw InputError("sample_ele_permutation: N must be positive");
  PermutationDraw draw;
  draw.perm.resize(N);
  std::iota(draw.perm.begin(), draw.perm.end(), 0);
  if (lambda >= 1.0 || N == 1) return draw;

  std::bernoulli_distribution mislinked(ele_mark_probability(N, lambda));
  std::vector<int> marked;
  do {
    marked.clear();
    for (int j = 0; j < N; ++j) {
      if (mislinked(rng)) marked.push_back(j);
    }
  } while (marked.size() == 1);
  if (marked.empty()) return draw;
  const auto d = uniform_derangement(static_cast<int>(marked.size()), rng);
  for (std::size_t k = 0; k < marked.size(); ++k) draw.perm[marked[k]] = marked[d[k]];
  return draw;
}

std::vector<LambdaEstimate> estimate_lambda_audit(const std::vector<AuditBlock>& audit,
                                                  AuditVarianceForm form,
                                                  const std::map<std::string, int>& block_sample_sizes) {
  std::vector<LambdaEstimate> out;
  out.reserve(audit.size());
  for (const auto& a : audit) {
    if (a.m < 1) throw InputError("estimate_lambda_audit: block " + a.block_id + " has no audited links");
    if (a.correct < 0 || a.correct > a.m) {
      throw InputError("estimate_lambda_audit: block " + a.block_id + " has correct count outside [0, m]");
    }
    LambdaEstimate e;
    e.block_id = a.block_id;
    e.lambda_hat = static_cast<double>(a.correct) / a.m;
    const double pq = e.lambda_hat * (1.0 - e.lambda_hat);
    if (form == AuditVarianceForm::binomial) {
      e.variance = pq / a.m;
    } else {
      auto it = block_sample_sizes.find(a.block_id);
      if (it == block_sample_sizes.end()) {
        throw InputError("estimate_lambda_audit: no sample size for block " + a.block_id);
      }
      e.variance = it->second * pq;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace sae
