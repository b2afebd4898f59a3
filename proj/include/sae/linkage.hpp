#pragma once

// Exchangeable linkage error (ELE) model: within an (area, block) cell of
// size N a record links correctly with probability lambda and to each of the
// other N - 1 records with probability gamma = (1 - lambda) / (N - 1).

#include "sae/rng.hpp"
#include "sae/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace sae {

/// Per-record mislink probability. Throws InputError when N < 2: a cell with
/// one record has no alternative link and must be treated with lambda = 1.
double gamma(double lambda, int N);

/// Correct-link probability actually used for a cell: lambda, or 1 for N == 1.
double effective_lambda(double lambda, int N);

/// E(A_s) for a cell whose first n population units are the sampled ones:
/// [(lambda - gamma) I_n | 0] + gamma 1_n 1_N'.
Matrix expected_sampled_permutation(int n, int N, double lambda);

/// X* = (lambda - gamma) X_s + gamma N 1 xbar'.
Matrix corrected_design(const Matrix& X_s, const Vector& xbar, double lambda, int N);

/// Diagonal of the linkage-induced variance of A_s X beta:
/// (1 - lambda) (lambda (f_j - fbar)^2 + fbar2 - fbar^2).
Vector linkage_variance_diag(const Vector& f, double fbar, double fbar2, double lambda);

/// d v_j / d lambda for the expression above, holding f fixed.
Vector linkage_variance_dlambda(const Vector& f, double fbar, double fbar2, double lambda);

/// A permutation of {0..N-1}; perm[j] is the population record linked to unit j.
struct PermutationDraw {
  std::vector<int> perm;
  int fixed_points() const;
};

/// Mark probability m for which independent marks, redrawn whenever exactly
/// one unit is marked, leave each unit marked with probability 1 - lambda.
double ele_mark_probability(int N, double lambda);

/// Units are marked independently with probability ele_mark_probability(N,
/// lambda); a draw with exactly one mark is rejected. The marked set is
/// rearranged by a uniform derangement, so every unit keeps its own record
/// with probability lambda and receives any other one with probability gamma.
PermutationDraw sample_ele_permutation(int N, double lambda, Rng& rng);

/// Uniform random derangement of n >= 2 elements by rejection.
std::vector<int> uniform_derangement(int n, Rng& rng);

enum class AuditVarianceForm {
  binomial,  // lambda_hat (1 - lambda_hat) / m
  paper,     // n_q lambda_hat (1 - lambda_hat), n_q = linked sample size of the block
};

struct AuditBlock {
  std::string block_id;
  int m = 0;        // audited links
  int correct = 0;  // audited links found correct
};

struct LambdaEstimate {
  std::string block_id;
  double lambda_hat = 1.0;
  double variance = 0.0;
};

/// Block-wise proportion of correct links in an audit sample. `block_sample_sizes`
/// is only consulted for AuditVarianceForm::paper.
std::vector<LambdaEstimate> estimate_lambda_audit(
    const std::vector<AuditBlock>& audit, AuditVarianceForm form = AuditVarianceForm::binomial,
    const std::map<std::string, int>& block_sample_sizes = {});

}  // namespace sae
