#include "sae/metrics.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace sae {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::string fmt(double x) {
  if (!std::isfinite(x)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

SimulationReport metrics(const MonteCarloResult& res) {
  std::vector<const ReplicateResult*> ok;
  for (const auto& r : res.replicates) {
    if (r.ok) ok.push_back(&r);
  }
  const int R = static_cast<int>(ok.size());
  if (R < 1) throw InputError("metrics: no successful replicates");
  const int D = static_cast<int>(ok.front()->truth.size());
  const int E = static_cast<int>(res.estimators.size());

  SimulationReport rep;
  rep.replicates_used = R;
  rep.failures = res.failures;
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  int boundary = 0;
  Vector mean_truth = Vector::Zero(D);
  for (const auto* r : ok) {
    mean_truth += r->truth;
    rep.max_certificate = std::max(rep.max_certificate, r->diag.max_certificate);
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, r->diag.min_eigenvalue);
    rep.max_asymmetry = std::max(rep.max_asymmetry, r->diag.max_asymmetry);
    boundary += r->diag.boundary ? 1 : 0;
    rep.mean_mislink_rate += r->mislink_rate;
  }
  mean_truth /= R;
  rep.boundary_rate = static_cast<double>(boundary) / R;
  rep.mean_mislink_rate /= R;

  int baseline = -1;
  for (int e = 0; e < E; ++e) {
    if (res.estimators[e] == "EBLUP") baseline = e;
  }
  const bool have_mse = ok.front()->mse.size() > 0 && ok.front()->mse.allFinite();

  for (int e = 0; e < E; ++e) {
    EstimatorSummary s;
    s.name = res.estimators[e];
    s.relbias_pct.resize(D);
    s.rrmse_pct.resize(D);
    s.rmse.resize(D);
    for (int i = 0; i < D; ++i) {
      double b = 0.0, m2 = 0.0;
      for (const auto* r : ok) {
        const double err = r->point(i, e) - r->truth(i);
        b += err;
        m2 += err * err;
      }
      b /= R;
      m2 /= R;
      s.relbias_pct(i) = 100.0 * b / mean_truth(i);
      s.rmse(i) = std::sqrt(m2);
      s.rrmse_pct(i) = 100.0 * s.rmse(i) / mean_truth(i);
    }
    s.median_relbias_pct = median(to_std(s.relbias_pct));
    s.median_abs_relbias_pct = median(to_std(s.relbias_pct.cwiseAbs()));
    s.median_rrmse_pct = median(to_std(s.rrmse_pct));
    rep.estimators.push_back(s);

    if (have_mse) {
      MseSummary m;
      m.name = s.name;
      std::vector<double> rb(D), rr(D);
      for (int i = 0; i < D; ++i) {
        double b = 0.0, m2 = 0.0;
        for (const auto* r : ok) {
          const double d = std::sqrt(std::max(r->mse(i, e), 0.0)) - s.rmse(i);
          b += d;
          m2 += d * d;
        }
        rb[i] = 100.0 * (b / R) / s.rmse(i);
        rr[i] = 100.0 * std::sqrt(m2 / R) / s.rmse(i);
      }
      m.median_relbias_pct = median(rb);
      m.median_rrmse_pct = median(rr);
      rep.mse.push_back(m);
    }
  }
  for (auto& s : rep.estimators) {
    if (baseline < 0) {
      s.eff = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const Vector& base = rep.estimators[baseline].rmse;
    std::vector<double> ratio(D);
    for (int i = 0; i < D; ++i) ratio[i] = 100.0 * s.rmse(i) / base(i);
    s.eff = median(ratio);
  }
  return rep;
}

void write_table1(const SimulationReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  f << "estimator,median_relbias_pct,median_abs_relbias_pct,median_rrmse_pct,eff\n";
  for (const auto& s : rep.estimators) {
    f << s.name << ',' << fmt(s.median_relbias_pct) << ',' << fmt(s.median_abs_relbias_pct) << ','
      << fmt(s.median_rrmse_pct) << ',' << fmt(s.eff) << '\n';
  }
}

void write_table2(const SimulationReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  f << "estimator,median_relbias_pct,median_rrmse_pct\n";
  for (const auto& m : rep.mse) {
    f << m.name << ',' << fmt(m.median_relbias_pct) << ',' << fmt(m.median_rrmse_pct) << '\n';
  }
}

}  // namespace sae
