#include "sae/sample.hpp"

#include "sae/error.hpp"
#include "sae/linkage.hpp"

#include <set>
#include <utility>

namespace sae {

void LinkedSample::build() {
  const int n = static_cast<int>(y_star.size());
  if (X.rows() != n) throw InputError("linked sample: X and y_star row counts differ");
  if (static_cast<int>(area_of.size()) != n || static_cast<int>(block_of.size()) != n) {
    throw InputError("linked sample: area/block labels must have one entry per row");
  }
  const int D = static_cast<int>(area_ids.size());
  const int Q = static_cast<int>(block_lambda.size());
  const int pp = p();
  for (double l : block_lambda) {
    if (!(l >= 0.0 && l <= 1.0)) throw InputError("linked sample: lambda outside [0, 1]");
  }

  cell_of.assign(n, -1);
  std::set<std::pair<int, int>> seen;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    if (cell.area < 0 || cell.area >= D || cell.block < 0 || cell.block >= Q) {
      throw InputError("linked sample: cell references unknown area or block");
    }
    if (!seen.insert({cell.area, cell.block}).second) throw InputError("linked sample: duplicate cell");
    if (cell.xbar.size() != pp) throw InputError("linked sample: cell mean width differs from X");
    cell.rows.clear();
  }
  for (int j = 0; j < n; ++j) {
    int found = -1;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].area == area_of[j] && cells[c].block == block_of[j]) {
        found = static_cast<int>(c);
        break;
      }
    }
    if (found < 0) throw InputError("linked sample: sampled unit in a cell without aggregates");
    cell_of[j] = found;
    cells[found].rows.push_back(j);
  }

  X_star.resize(n, pp);
  unit_lambda.resize(n);
  areas.assign(D, AreaInfo{});
  for (auto& a : areas) {
    a.xbar = Vector::Zero(pp);
    a.xbar_r = Vector::Zero(pp);
    a.xbar_r_star = Vector::Zero(pp);
  }

  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    if (cell.n != static_cast<int>(cell.rows.size())) {
      throw InputError("linked sample: n_iq in aggregates differs from sampled units in cell");
    }
    if (cell.N < 1 || cell.n > cell.N) throw InputError("linked sample: need 1 <= N_iq and n_iq <= N_iq");
    const double lam = effective_lambda(block_lambda[cell.block], cell.N);
    const double g = cell.N < 2 ? 0.0 : gamma(lam, cell.N);

    Matrix Xs(cell.n, pp);
    for (int k = 0; k < cell.n; ++k) Xs.row(k) = X.row(cell.rows[k]);
    const Matrix Xcs = corrected_design(Xs, cell.xbar, lam, cell.N);
    for (int k = 0; k < cell.n; ++k) {
      X_star.row(cell.rows[k]) = Xcs.row(k);
      unit_lambda(cell.rows[k]) = lam;
    }

    auto& a = areas[cell.area];
    a.N += cell.N;
    a.n += cell.n;
    a.xbar += cell.N * cell.xbar;
    a.cells.push_back(static_cast<int>(c));
    if (cell.N > cell.n) {
      // Sum over non-sampled units of x and of x*.
      const Vector sum_r = cell.N * cell.xbar - Xs.colwise().sum().transpose();
      a.xbar_r += sum_r;
      a.xbar_r_star += (lam - g) * sum_r + (g * cell.N * (cell.N - cell.n)) * cell.xbar;
    }
  }

  for (int j = 0; j < n; ++j) areas[area_of[j]].rows.push_back(j);
  for (int i = 0; i < D; ++i) {
    auto& a = areas[i];
    if (a.n == 0) throw InputError("linked sample: area " + area_ids[i] + " has no sampled units");
    a.xbar /= a.N;
    if (a.N > a.n) {
      a.xbar_r /= (a.N - a.n);
      a.xbar_r_star /= (a.N - a.n);
    }
    double s = 0.0;
    for (int j : a.rows) s += y_star(j);
    a.ybar_star = s / a.n;
  }
}

LinkedSample with_block_lambdas(const LinkedSample& s, std::vector<double> block_lambda) {
  LinkedSample out = s;
  out.block_lambda = std::move(block_lambda);
  out.build();
  return out;
}

LinkedSample with_perfect_linkage(const LinkedSample& s) {
  return with_block_lambdas(s, std::vector<double>(s.block_lambda.size(), 1.0));
}

BlockMoments block_moments(const LinkedSample& s, const Vector& beta) {
  const int Q = s.num_blocks();
  BlockMoments m{std::vector<double>(Q, 0.0), std::vector<double>(Q, 0.0)};
  std::vector<int> count(Q, 0);
  const Vector f = s.X * beta;
  for (int j = 0; j < s.size(); ++j) {
    const int q = s.block_of[j];
    m.fbar[q] += f(j);
    m.fbar2[q] += f(j) * f(j);
    ++count[q];
  }
  for (int q = 0; q < Q; ++q) {
    if (count[q] > 0) {
      m.fbar[q] /= count[q];
      m.fbar2[q] /= count[q];
    }
  }
  return m;
}

Vector linkage_variances(const LinkedSample& s, const Vector& beta) {
  const BlockMoments m = block_moments(s, beta);
  const Vector f = s.X * beta;
  Vector v(s.size());
  for (int j = 0; j < s.size(); ++j) {
    const int q = s.block_of[j];
    v(j) = linkage_variance_diag(f.segment(j, 1), m.fbar[q], m.fbar2[q], s.unit_lambda(j))(0);
  }
  return v;
}

Vector linkage_variances_dlambda(const LinkedSample& s, const Vector& beta, int block) {
  const BlockMoments m = block_moments(s, beta);
  const Vector f = s.X * beta;
  Vector d = Vector::Zero(s.size());
  for (int j = 0; j < s.size(); ++j) {
    const int q = s.block_of[j];
    // Degenerate cells carry lambda = 1 regardless of the block value.
    if (q != block || s.cells[s.cell_of[j]].N < 2) continue;
    d(j) = linkage_variance_dlambda(f.segment(j, 1), m.fbar[q], m.fbar2[q], s.unit_lambda(j))(0);
  }
  return d;
}

}  // namespace sae
