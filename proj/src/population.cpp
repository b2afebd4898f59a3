#include "sae/population.hpp"

#include "sae/error.hpp"
#include "sae/linkage.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace sae {

const std::vector<Estimator>& all_estimators() {
  static const std::vector<Estimator> all{Estimator::eblup,  Estimator::eblup_star, Estimator::eblup_starstar,
                                          Estimator::reblup, Estimator::reblup_star, Estimator::mq,
                                          Estimator::mq_star};
  return all;
}

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::eblup: return "EBLUP";
    case Estimator::eblup_star: return "*EBLUP";
    case Estimator::eblup_starstar: return "**EBLUP";
    case Estimator::reblup: return "REBLUP";
    case Estimator::reblup_star: return "*REBLUP";
    case Estimator::mq: return "MQ";
    case Estimator::mq_star: return "*MQ";
  }
  return "?";
}

Estimator parse_estimator(const std::string& name) {
  for (Estimator e : all_estimators()) {
    if (estimator_name(e) == name) return e;
  }
  throw InputError("unknown estimator '" + name + "'");
}

void ScenarioConfig::validate() const {
  if (areas < 1) throw InputError("config: areas must be positive");
  if (lambdas.empty()) throw InputError("config: need at least one block lambda");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw InputError("config: lambdas must lie in [0, 1]");
  }
  if (units_per_block < 1 || units_per_block * static_cast<int>(lambdas.size()) != area_size) {
    throw InputError("config: area_size must equal units_per_block times the number of blocks");
  }
  if (sample_size < 1 || sample_size > area_size) throw InputError("config: need 1 <= sample_size <= area_size");
  if (replicates < 1) throw InputError("config: replicates must be positive");
  if (!(huber_c > 0.0)) throw InputError("config: huber_c must be positive");
  if (estimators.empty()) throw InputError("config: no estimators selected");
  if (sigma2_u < 0.0 || sigma2_e <= 0.0 || sigma2_u_outlier < 0.0 || sigma2_e_outlier <= 0.0) {
    throw InputError("config: variances must be non-negative (error variances positive)");
  }
  if (!(contamination >= 0.0 && contamination <= 1.0)) throw InputError("config: contamination outside [0, 1]");
  if (outlier_areas < 0 || outlier_areas > areas) throw InputError("config: outlier_areas outside [0, areas]");
}

Vector PopulationFrame::area_means() const {
  Vector m = Vector::Zero(num_areas());
  std::vector<int> cnt(num_areas(), 0);
  for (int j = 0; j < size(); ++j) {
    m(area_of[j]) += y(j);
    ++cnt[area_of[j]];
  }
  for (int i = 0; i < num_areas(); ++i) m(i) /= cnt[i];
  return m;
}

std::vector<std::vector<int>> PopulationFrame::area_units() const {
  std::vector<std::vector<int>> u(num_areas());
  for (int j = 0; j < size(); ++j) u[area_of[j]].push_back(j);
  return u;
}

PopulationFrame generate_population(const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();
  const int D = cfg.areas;
  const int Ni = cfg.area_size;
  const int Q = static_cast<int>(cfg.lambdas.size());
  const int N = D * Ni;
  PopulationFrame pop;
  pop.X.resize(N, 2);
  pop.y.resize(N);
  pop.area_of.resize(N);
  pop.block_of.resize(N);
  pop.mislinked.assign(N, 0);
  pop.block_lambda = cfg.lambdas;
  for (int i = 0; i < D; ++i) pop.area_ids.push_back(std::to_string(i + 1));
  for (int q = 0; q < Q; ++q) pop.block_ids.push_back(std::to_string(q + 1));

  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::lognormal_distribution<double> xdist(cfg.x_meanlog, cfg.x_sdlog);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool outl = cfg.scenario == Scenario::outliers;

  std::vector<int> labels(Ni);
  for (int k = 0; k < Ni; ++k) labels[k] = k / cfg.units_per_block;
  for (int i = 0; i < D; ++i) {
    const double s2u = (outl && i >= D - cfg.outlier_areas) ? cfg.sigma2_u_outlier : cfg.sigma2_u;
    const double u = std::sqrt(s2u) * stdnorm(rng);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (int k = 0; k < Ni; ++k) {
      const int j = i * Ni + k;
      const double x = xdist(rng);
      double s2e = cfg.sigma2_e;
      if (outl && unif(rng) < cfg.contamination) s2e = cfg.sigma2_e_outlier;
      const double e = std::sqrt(s2e) * stdnorm(rng);
      pop.X(j, 0) = 1.0;
      pop.X(j, 1) = x;
      pop.y(j) = cfg.beta0 + cfg.beta1 * x + u + e;
      pop.area_of[j] = i;
      pop.block_of[j] = labels[k];
      pop.unit_ids.push_back(std::to_string(j + 1));
    }
  }
  pop.y_star = pop.y;
  return pop;
}

void apply_linkage(PopulationFrame& pop, Rng& rng) {
  std::map<std::pair<int, int>, std::vector<int>> cells;
  for (int j = 0; j < pop.size(); ++j) cells[{pop.area_of[j], pop.block_of[j]}].push_back(j);
  pop.y_star = pop.y;
  std::fill(pop.mislinked.begin(), pop.mislinked.end(), 0);
  pop.mislinked.resize(pop.size(), 0);
  for (const auto& [key, members] : cells) {
    const int N = static_cast<int>(members.size());
    const double lam = effective_lambda(pop.block_lambda[key.second], N);
    const PermutationDraw d = sample_ele_permutation(N, lam, rng);
    for (int k = 0; k < N; ++k) {
      pop.y_star(members[k]) = pop.y(members[d.perm[k]]);
      pop.mislinked[members[k]] = d.perm[k] != k;
    }
  }
}

LinkedSample draw_sample(const PopulationFrame& pop, const std::vector<int>& n_per_area, Rng& rng,
                         std::vector<int>* units_out) {
  const int D = pop.num_areas();
  if (static_cast<int>(n_per_area.size()) != D) throw InputError("draw_sample: one sample size per area");
  const auto area_units = pop.area_units();
  std::vector<int> chosen;
  for (int i = 0; i < D; ++i) {
    std::vector<int> u = area_units[i];
    const int ni = n_per_area[i];
    if (ni < 1 || ni > static_cast<int>(u.size())) throw InputError("draw_sample: need 1 <= n_i <= N_i");
    // Partial Fisher-Yates: the first ni entries form an SRSWOR.
    for (int k = 0; k < ni; ++k) {
      std::uniform_int_distribution<int> pick(k, static_cast<int>(u.size()) - 1);
      std::swap(u[k], u[pick(rng)]);
    }
    std::sort(u.begin(), u.begin() + ni);
    chosen.insert(chosen.end(), u.begin(), u.begin() + ni);
  }

  LinkedSample s;
  const int n = static_cast<int>(chosen.size());
  const int p = static_cast<int>(pop.X.cols());
  s.X.resize(n, p);
  s.y_star.resize(n);
  for (int k = 0; k < n; ++k) {
    const int j = chosen[k];
    s.X.row(k) = pop.X.row(j);
    s.y_star(k) = pop.y_star(j);
    s.area_of.push_back(pop.area_of[j]);
    s.block_of.push_back(pop.block_of[j]);
  }
  s.block_lambda = pop.block_lambda;
  s.area_ids = pop.area_ids;
  s.block_ids = pop.block_ids;

  std::map<std::pair<int, int>, int> index;
  for (int j = 0; j < pop.size(); ++j) {
    const auto key = std::make_pair(pop.area_of[j], pop.block_of[j]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, static_cast<int>(s.cells.size())).first;
      CellInfo c;
      c.area = key.first;
      c.block = key.second;
      c.xbar = Vector::Zero(p);
      s.cells.push_back(c);
    }
    auto& c = s.cells[it->second];
    ++c.N;
    c.xbar += pop.X.row(j).transpose();
  }
  for (auto& c : s.cells) c.xbar /= c.N;
  for (int k = 0; k < n; ++k) ++s.cells[index.at({s.area_of[k], s.block_of[k]})].n;
  s.build();
  if (units_out) *units_out = chosen;
  return s;
}

std::vector<int> proportional_allocation(const PopulationFrame& pop, int n_total, int min_size) {
  const int D = pop.num_areas();
  std::vector<int> Ni(D, 0);
  for (int a : pop.area_of) ++Ni[a];
  const int N = pop.size();
  if (n_total < 1 || n_total > N) throw InputError("proportional_allocation: need 1 <= n <= N");
  std::vector<int> n(D);
  std::vector<std::pair<double, int>> rem;
  int used = 0;
  for (int i = 0; i < D; ++i) {
    const double share = static_cast<double>(n_total) * Ni[i] / N;
    n[i] = static_cast<int>(std::floor(share));
    rem.push_back({share - n[i], i});
    used += n[i];
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (int k = 0; used < n_total && k < D; ++k, ++used) ++n[rem[k].second];
  for (int i = 0; i < D; ++i) n[i] = std::min(Ni[i], std::max(n[i], min_size));
  return n;
}

}  // namespace sae
