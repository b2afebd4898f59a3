#include "commands.hpp"

#include "sae/config.hpp"
#include "sae/error.hpp"
#include "sae/io.hpp"
#include "sae/lmm.hpp"
#include "sae/metrics.hpp"
#include "sae/montecarlo.hpp"
#include "sae/mquantile.hpp"
#include "sae/robust.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>

namespace sae::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::string prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir);
  return dir;
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  f << j.dump(2) << '\n';
}

ordered_json vec(const Vector& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

ordered_json coefficients(const Vector& beta, const std::vector<std::string>& covariates) {
  ordered_json j;
  j["intercept"] = beta(0);
  for (std::size_t k = 0; k < covariates.size(); ++k) j[covariates[k]] = beta(k + 1);
  return j;
}

// Per-block variances of the estimated lambdas, or empty when they are not
// to be propagated.
std::vector<double> lambda_variances(const EstimationArgs& est, const Paradata& para, const LinkedSample& s) {
  if (est.lambda_uncertainty == "none") return {};
  if (!para.audit.empty()) {
    std::map<std::string, int> sizes;
    for (int j = 0; j < s.size(); ++j) ++sizes[s.block_ids[s.block_of[j]]];
    for (const auto& id : s.block_ids) sizes.emplace(id, 0);
    const auto form = est.lambda_uncertainty == "paper" ? AuditVarianceForm::paper : AuditVarianceForm::binomial;
    std::vector<double> v;
    for (const auto& e : estimate_lambda_audit(para.audit, form, sizes)) v.push_back(e.variance);
    return v;
  }
  if (!para.var_lambda.empty()) {
    warn("paradata has var_lambda but no m_q/correct_q; using var_lambda as given");
    return para.var_lambda;
  }
  warn("no audit information in the paradata; lambda uncertainty term omitted");
  return {};
}

struct MethodResult {
  std::vector<AreaPrediction> predictions;
  std::vector<std::string> component_names;
  ordered_json summary;
};

MethodResult run_method(const LoadedSample& data, const Paradata& para, const EstimationArgs& est) {
  const LinkedSample& s = data.sample;
  MethodResult r;
  ordered_json& j = r.summary;
  j["method"] = est.method;
  j["sample_size"] = s.size();
  j["areas"] = s.num_areas();
  j["blocks"] = s.num_blocks();

  if (est.method == "eblup-star" || est.method == "eblup-starstar") {
    const bool star = est.method == "eblup-star";
    const MixedFit fit = fit_lmm_linked(s);
    r.predictions = predict_means_eblup(fit, s, star ? EblupVariant::star : EblupVariant::starstar);
    j["coefficients"] = coefficients(fit.beta, data.covariates);
    j["variance_components"] = {{"sigma2_u", fit.delta.sigma2_u}, {"sigma2_e", fit.delta.sigma2_e}};
    j["iterations"] = fit.iterations;
    j["boundary"] = fit.boundary;
    j["equation_residual_norms"] = {{"beta", fit.gls_residual}, {"delta", fit.score_residual}};
    if (est.mse) {
      auto m = star ? mse_eblup_star(fit, s) : mse_eblup_starstar(fit, s);
      const auto lv = lambda_variances(est, para, s);
      if (!lv.empty()) add_g4(m, mse_g4_lambda(fit, s, lv), s);
      j["lambda_uncertainty"] = lv.empty() ? "none" : est.lambda_uncertainty;
      r.component_names = {"g1", "g2", "g3", "g4"};
      for (int i = 0; i < s.num_areas(); ++i) {
        r.predictions[i].mse = m[i].total;
        r.predictions[i].components = {m[i].g1, m[i].g2, m[i].g3, m[i].g4};
      }
    }
  } else if (est.method == "reblup-star") {
    RobustConfig cfg;
    cfg.c = est.huber_c;
    const RobustFit fit = fit_reblup_star(s, cfg);
    r.predictions = predict_means_reblup_star(fit, s);
    j["huber_c"] = fit.c;
    j["coefficients"] = coefficients(fit.beta, data.covariates);
    j["variance_components"] = {{"sigma2_u", fit.delta.sigma2_u}, {"sigma2_e", fit.delta.sigma2_e}};
    j["area_effects"] = vec(fit.u);
    j["iterations"] = fit.iterations;
    j["boundary"] = fit.boundary;
    j["equation_residual_norms"] = {
        {"beta", fit.residual_norms(0)}, {"u", fit.residual_norms(1)}, {"delta", fit.residual_norms(2)}};
    if (est.mse) {
      if (est.lambda_uncertainty != "none") warn("lambda uncertainty is only propagated for the EBLUP methods");
      const auto m = mse_reblup_star(fit, s, cfg);
      r.component_names = {"h1", "h2", "h3", "bias2"};
      for (int i = 0; i < s.num_areas(); ++i) {
        r.predictions[i].mse = m[i].total;
        r.predictions[i].components = {m[i].h1, m[i].h2, m[i].h3, m[i].bias2};
      }
    }
  } else if (est.method == "mq-star") {
    MqConfig cfg;
    cfg.c = est.huber_c;
    if (!est.tau_grid.empty()) cfg.grid = est.tau_grid;
    const MqStarFit fit = fit_mq_star(s, cfg);
    r.predictions = predict_means_mq_star(s, fit.area_fits);
    j["huber_c"] = cfg.c;
    j["tau_grid"] = cfg.grid;
    double grid_norm = 0.0;
    for (const auto& g : fit.grid.fits) grid_norm = std::max(grid_norm, g.residual_norm);
    ordered_json areas = ordered_json::array();
    int fallbacks = 0;
    for (int i = 0; i < s.num_areas(); ++i) {
      const MqTauFit& f = fit.area_fits[i];
      fallbacks += f.converged ? 0 : 1;
      areas.push_back({{"area_id", s.area_ids[i]},
                       {"tau", f.tau},
                       {"coefficients", coefficients(f.beta, data.covariates)},
                       {"scale2", f.sigma2},
                       {"converged", f.converged},
                       {"equation_residual_norm", f.residual_norm}});
    }
    j["grid_equation_residual_norm"] = grid_norm;
    j["area_refit_fallbacks"] = fallbacks;
    j["area_fits"] = areas;
    if (fallbacks > 0) warn(std::to_string(fallbacks) + " area refits fell back to the nearest grid fit");
    if (est.mse) {
      if (est.lambda_uncertainty != "none") warn("lambda uncertainty is only propagated for the EBLUP methods");
      const auto m = mse_mq_star(s, fit.coef, fit.area_fits, cfg);
      r.component_names = {"variance", "bias2", "v_tau"};
      for (int i = 0; i < s.num_areas(); ++i) {
        r.predictions[i].mse = m[i].total;
        r.predictions[i].components = {m[i].variance, m[i].bias2, m[i].v_tau};
      }
    }
  } else {
    throw InputError("unknown method '" + est.method + "'");
  }
  if (!est.mse) {
    for (auto& p : r.predictions) p.mse = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

int finish_fit(const LoadedSample& data, const Paradata& para, const FitArgs& args) {
  const std::string dir = prepare_out(args.out);
  const MethodResult r = run_method(data, para, args.est);
  write_predictions((fs::path(dir) / "predictions.csv").string(), data.sample.area_ids, r.predictions,
                    r.component_names);
  ordered_json j = r.summary;
  j["mse"] = args.est.mse;
  write_json((fs::path(dir) / "summary.json").string(), j);
  return ok;
}

ordered_json report_json(const SimulationReport& rep, const ScenarioConfig& cfg, int requested) {
  ordered_json j;
  j["scenario"] = scenario_name(cfg.scenario);
  j["base_seed"] = cfg.base_seed;
  j["replicates_requested"] = requested;
  j["replicates_used"] = rep.replicates_used;
  j["failures"] = rep.failures;
  j["max_equation_residual_norm"] = rep.max_certificate;
  j["min_eigenvalue"] = rep.min_eigenvalue;
  j["max_asymmetry"] = rep.max_asymmetry;
  j["boundary_rate"] = rep.boundary_rate;
  j["mean_mislink_rate"] = rep.mean_mislink_rate;
  return j;
}

}  // namespace

int cmd_fit(const FitArgs& args) {
  const Paradata para = read_paradata(args.paradata);
  const LoadedSample data = load_linked_sample(args.sample, args.paradata, args.aggregates);
  return finish_fit(data, para, args);
}

int cmd_predict(const FitArgs& args) {
  const Paradata para = read_paradata(args.paradata);
  const LoadedSample data = load_sample_with_population(args.sample, args.paradata, args.population);
  return finish_fit(data, para, args);
}

int cmd_simulate(const SimulateArgs& args) {
  ScenarioConfig cfg = read_scenario(args.config);
  if (args.seed) cfg.base_seed = *args.seed;
  if (args.replicates) cfg.replicates = *args.replicates;
  cfg.validate();
  if (cfg.replicates < 2) warn("only " + std::to_string(cfg.replicates) + " replicate; Monte Carlo summaries are not meaningful");
  const std::string dir = prepare_out(args.out);

  int last_pct = -1;
  ProgressFn progress;
  if (!args.quiet) {
    progress = [&](int done, int total) {
      const int pct = 100 * done / total;
      if (pct / 10 != last_pct / 10 || done == total) {
        last_pct = pct;
        std::cerr << "replicates " << done << '/' << total << '\n';
      }
    };
  }
  MonteCarloResult res;
  if (args.population.empty()) {
    res = run_monte_carlo(cfg, !args.serial, progress);
  } else {
    // Only the sampling stage is random; responses and links are as given.
    const PopulationFrame pop = read_population(args.population, read_paradata(args.paradata));
    for (int j = 0; j < pop.size(); ++j) {
      if (std::isnan(pop.y(j))) throw InputError(args.population + ": design-based mode needs a y column");
    }
    std::vector<int> sizes(pop.num_areas(), 0);
    for (int a : pop.area_of) ++sizes[a];
    for (int i = 0; i < pop.num_areas(); ++i) {
      if (sizes[i] < cfg.sample_size) {
        throw InputError(args.population + ": area " + pop.area_ids[i] + " has fewer than sample_size units");
      }
    }
    res = run_design_based(pop, std::vector<int>(pop.num_areas(), cfg.sample_size), cfg, !args.serial, progress);
  }
  for (const auto& r : res.replicates) {
    if (!r.ok) warn("replicate " + std::to_string(r.replicate) + " excluded: " + r.failure);
  }
  const SimulationReport rep = metrics(res);
  write_table1(rep, (fs::path(dir) / "table1.csv").string());
  if (cfg.mse) write_table2(rep, (fs::path(dir) / "table2.csv").string());
  write_json((fs::path(dir) / "summary.json").string(), report_json(rep, cfg, cfg.replicates));

  if (args.dump_replicates) {
    std::ofstream f(fs::path(dir) / "replicates.csv");
    if (!f) throw InputError("cannot write replicates.csv");
    f << "replicate,area_id,estimator,truth,point,mse\n";
    for (const auto& r : res.replicates) {
      if (!r.ok) continue;
      for (Eigen::Index i = 0; i < r.point.rows(); ++i) {
        for (std::size_t e = 0; e < res.estimators.size(); ++e) {
          f << r.replicate << ',' << i + 1 << ',' << res.estimators[e] << ',' << format_double(r.truth(i)) << ','
            << format_double(r.point(i, e)) << ',' << format_double(r.mse(i, e)) << '\n';
        }
      }
    }
  }
  if (args.dump_population && args.population.empty()) {
    Rng pop_rng = make_stream(cfg.base_seed, 0, Stage::population);
    PopulationFrame pop = generate_population(cfg, pop_rng);
    Rng link_rng = make_stream(cfg.base_seed, 0, Stage::linkage);
    apply_linkage(pop, link_rng);
    write_population(pop, (fs::path(dir) / "population_r0.csv").string());
  }
  return ok;
}

int cmd_audit_lambda(const AuditArgs& args) {
  const auto audit = read_audit(args.audit);
  if (!args.paradata.empty()) {
    const Paradata para = read_paradata(args.paradata);
    for (const auto& id : para.block_ids) {
      bool found = false;
      for (const auto& b : audit) found = found || b.block_id == id;
      if (!found) throw InputError(args.audit + ": block " + id + " has no audit rows");
    }
  }
  std::map<std::string, int> sizes;
  AuditVarianceForm form = AuditVarianceForm::binomial;
  if (args.form == "paper") {
    form = AuditVarianceForm::paper;
    if (args.sample.empty()) throw InputError("--form paper needs --sample for the block sample sizes");
    const CsvTable t = read_csv(args.sample);
    const int cb = t.column("block_id");
    for (std::size_t r = 0; r < t.rows.size(); ++r) ++sizes[t.text(r, cb)];
  } else if (args.form != "binomial") {
    throw InputError("unknown variance form '" + args.form + "'");
  }
  const auto est = estimate_lambda_audit(audit, form, sizes);
  const fs::path out(args.out);
  if (out.has_parent_path()) prepare_out(out.parent_path().string());
  write_paradata(args.out, est);
  return ok;
}

}  // namespace sae::cli
