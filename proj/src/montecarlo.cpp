#include "sae/montecarlo.hpp"

#include "sae/error.hpp"
#include "sae/lmm.hpp"
#include "sae/mquantile.hpp"
#include "sae/robust.hpp"

#include <cmath>
#include <limits>

namespace sae {

namespace {

void check_matrix(const Matrix& m, FitDiagnostics& d) {
  if (m.size() == 0) return;
  d.max_asymmetry = std::max(d.max_asymmetry, (m - m.transpose()).cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  d.min_eigenvalue = std::min(d.min_eigenvalue, es.eigenvalues().minCoeff());
}

struct LmmPart {
  MixedFit fit;
  bool done = false;
};

}  // namespace

AreaEstimates estimate_all(const LinkedSample& linked, const std::vector<Estimator>& which,
                           const EstimationOptions& opt) {
  const int D = linked.num_areas();
  const int E = static_cast<int>(which.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  AreaEstimates out;
  out.point = Matrix::Constant(D, E, nan);
  out.mse = Matrix::Constant(D, E, nan);
  out.diag.min_eigenvalue = std::numeric_limits<double>::infinity();
  const LinkedSample naive = with_perfect_linkage(linked);

  RobustConfig rcfg;
  rcfg.c = opt.huber_c;
  MqConfig mcfg;
  mcfg.c = opt.huber_c;
  if (!opt.tau_grid.empty()) mcfg.grid = opt.tau_grid;

  LmmPart lmm_naive, lmm_linked;
  auto lmm_for = [&](bool star) -> const MixedFit& {
    LmmPart& part = star ? lmm_linked : lmm_naive;
    if (!part.done) {
      part.fit = fit_lmm_linked(star ? linked : naive);
      part.done = true;
      out.diag.max_certificate = std::max({out.diag.max_certificate, part.fit.gls_residual, part.fit.score_residual});
      out.diag.boundary = out.diag.boundary || part.fit.boundary;
      check_matrix(part.fit.info, out.diag);
      check_matrix(part.fit.v_delta, out.diag);
    }
    return part.fit;
  };
  auto put = [&](int col, const std::vector<AreaPrediction>& pts) {
    for (int i = 0; i < D; ++i) out.point(i, col) = pts[i].point;
  };

  for (int col = 0; col < E; ++col) {
    switch (which[col]) {
      case Estimator::eblup:
      case Estimator::eblup_star: {
        const bool star = which[col] == Estimator::eblup_star;
        const LinkedSample& s = star ? linked : naive;
        const MixedFit& f = lmm_for(star);
        put(col, predict_means_eblup(f, s, EblupVariant::star));
        if (opt.mse) {
          const auto m = mse_eblup_star(f, s);
          for (int i = 0; i < D; ++i) out.mse(i, col) = m[i].total;
        }
        break;
      }
      case Estimator::eblup_starstar: {
        const MixedFit& f = lmm_for(true);
        put(col, predict_means_eblup(f, linked, EblupVariant::starstar));
        if (opt.mse) {
          const auto m = mse_eblup_starstar(f, linked);
          for (int i = 0; i < D; ++i) out.mse(i, col) = m[i].total;
        }
        break;
      }
      case Estimator::reblup:
      case Estimator::reblup_star: {
        const LinkedSample& s = which[col] == Estimator::reblup_star ? linked : naive;
        const RobustFit f = fit_reblup_star(s, rcfg);
        out.diag.max_certificate = std::max(out.diag.max_certificate, f.residual_norms.maxCoeff());
        out.diag.boundary = out.diag.boundary || f.boundary;
        put(col, predict_means_reblup_star(f, s));
        if (opt.mse) {
          check_matrix(sandwich_cov(f, s), out.diag);
          check_matrix(v_delta_robust(f, s), out.diag);
          const auto m = mse_reblup_star(f, s, rcfg);
          for (int i = 0; i < D; ++i) out.mse(i, col) = m[i].total;
        }
        break;
      }
      case Estimator::mq:
      case Estimator::mq_star: {
        const LinkedSample& s = which[col] == Estimator::mq_star ? linked : naive;
        const MqStarFit f = fit_mq_star(s, mcfg);
        for (const auto& g : f.grid.fits) out.diag.max_certificate = std::max(out.diag.max_certificate, g.residual_norm);
        for (const auto& a : f.area_fits) {
          if (a.converged) {
            out.diag.max_certificate = std::max(out.diag.max_certificate, a.residual_norm);
          } else {
            ++out.diag.mq_fallbacks;
          }
        }
        put(col, predict_means_mq_star(s, f.area_fits));
        if (opt.mse) {
          // The classical estimator has no term for the estimated coefficient.
          const auto m = mse_mq_star(s, f.coef, f.area_fits, mcfg);
          const bool star = which[col] == Estimator::mq_star;
          for (int i = 0; i < D; ++i) out.mse(i, col) = star ? m[i].total : m[i].variance + m[i].bias2;
        }
        break;
      }
    }
  }
  if (!std::isfinite(out.diag.min_eigenvalue)) out.diag.min_eigenvalue = 0.0;
  if (!out.point.allFinite()) throw NumericalError("estimate_all: non-finite point estimate");
  if (opt.mse && !out.mse.allFinite()) throw NumericalError("estimate_all: non-finite MSE estimate");
  return out;
}

namespace {

EstimationOptions options_of(const ScenarioConfig& cfg) {
  return {cfg.huber_c, cfg.mse, cfg.tau_grid};
}

std::vector<std::string> names_of(const ScenarioConfig& cfg) {
  std::vector<std::string> n;
  for (Estimator e : cfg.estimators) n.push_back(estimator_name(e));
  return n;
}

void fill_estimates(ReplicateResult& r, const LinkedSample& s, const ScenarioConfig& cfg) {
  try {
    AreaEstimates est = estimate_all(s, cfg.estimators, options_of(cfg));
    r.point = std::move(est.point);
    r.mse = std::move(est.mse);
    r.diag = est.diag;
    r.ok = true;
  } catch (const NumericalError& e) {
    r.ok = false;
    r.failure = e.what();
  }
}

template <class Body>
MonteCarloResult drive(const ScenarioConfig& cfg, bool parallel, const ProgressFn& progress, Body body) {
  const int R = cfg.replicates;
  MonteCarloResult out;
  out.estimators = names_of(cfg);
  out.replicates.resize(R);
  int done = 0;
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < R; ++r) {
      out.replicates[r] = body(r);
      if (progress) {
#pragma omp critical(sae_progress)
        progress(++done, R);
      }
    }
  } else {
    for (int r = 0; r < R; ++r) {
      out.replicates[r] = body(r);
      if (progress) progress(++done, R);
    }
  }
  for (const auto& r : out.replicates) out.failures += r.ok ? 0 : 1;
  if (out.failures > cfg.max_failure_rate * R) {
    std::string first;
    for (const auto& r : out.replicates) {
      if (!r.ok) {
        first = r.failure;
        break;
      }
    }
    throw NumericalError("monte carlo: " + std::to_string(out.failures) + " of " + std::to_string(R) +
                         " replicates failed (first: " + first + ")");
  }
  return out;
}

}  // namespace

ReplicateResult run_replicate(const ScenarioConfig& cfg, int replicate) {
  ReplicateResult r;
  r.replicate = replicate;
  Rng pop_rng = make_stream(cfg.base_seed, replicate, Stage::population);
  PopulationFrame pop = generate_population(cfg, pop_rng);
  Rng link_rng = make_stream(cfg.base_seed, replicate, Stage::linkage);
  apply_linkage(pop, link_rng);
  Rng samp_rng = make_stream(cfg.base_seed, replicate, Stage::sampling);
  const LinkedSample s = draw_sample(pop, std::vector<int>(cfg.areas, cfg.sample_size), samp_rng);
  r.truth = pop.area_means();
  int mis = 0;
  for (char m : pop.mislinked) mis += m;
  r.mislink_rate = static_cast<double>(mis) / pop.size();
  fill_estimates(r, s, cfg);
  return r;
}

MonteCarloResult run_monte_carlo(const ScenarioConfig& cfg, bool parallel, const ProgressFn& progress) {
  cfg.validate();
  return drive(cfg, parallel, progress, [&](int r) { return run_replicate(cfg, r); });
}

MonteCarloResult run_design_based(const PopulationFrame& pop, const std::vector<int>& n_per_area,
                                  const ScenarioConfig& cfg, bool parallel, const ProgressFn& progress) {
  const Vector truth = pop.area_means();
  int mis = 0;
  for (char m : pop.mislinked) mis += m;
  return drive(cfg, parallel, progress, [&](int rep) {
    ReplicateResult r;
    r.replicate = rep;
    r.truth = truth;
    r.mislink_rate = pop.size() ? static_cast<double>(mis) / pop.size() : 0.0;
    Rng rng = make_stream(cfg.base_seed, rep, Stage::sampling);
    const LinkedSample s = draw_sample(pop, n_per_area, rng);
    fill_estimates(r, s, cfg);
    return r;
  });
}

}  // namespace sae
