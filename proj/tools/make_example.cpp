// Writes the bundled example: a linked sample from one (e,u) population of
// 40 areas, its cell aggregates, the population register without responses,
// a 25-link clerical audit per block and the paradata.
//
//   make_example <out_dir> [seed]

#include "sae/io.hpp"
#include "sae/population.hpp"
#include "sae/rng.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_example <out_dir> [seed]\n";
    return 2;
  }
  namespace fs = std::filesystem;
  const fs::path dir(argv[1]);
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 40;
  fs::create_directories(dir);

  sae::ScenarioConfig cfg;
  cfg.scenario = sae::Scenario::outliers;
  sae::Rng pop_rng = sae::make_stream(seed, 0, sae::Stage::population);
  sae::PopulationFrame pop = sae::generate_population(cfg, pop_rng);
  sae::Rng link_rng = sae::make_stream(seed, 0, sae::Stage::linkage);
  sae::apply_linkage(pop, link_rng);
  sae::Rng samp_rng = sae::make_stream(seed, 0, sae::Stage::sampling);
  std::vector<int> units;
  const sae::LinkedSample s = sae::draw_sample(pop, std::vector<int>(cfg.areas, cfg.sample_size), samp_rng, &units);

  std::vector<std::string> ids;
  for (int u : units) ids.push_back(pop.unit_ids[u]);
  sae::write_sample_files(s, ids, (dir / "sample.csv").string(), (dir / "paradata.csv").string(),
                          (dir / "aggregates.csv").string());

  // Audit: 25 links drawn without replacement from each block of the register.
  sae::Rng audit_rng = sae::make_stream(seed, 0, sae::Stage::audit);
  std::vector<std::vector<int>> by_block(pop.num_blocks());
  for (int j = 0; j < pop.size(); ++j) by_block[pop.block_of[j]].push_back(j);
  std::ofstream audit(dir / "audit.csv");
  audit << "block_id,correct\n";
  std::vector<int> m(pop.num_blocks(), 0), correct(pop.num_blocks(), 0);
  for (int q = 0; q < pop.num_blocks(); ++q) {
    auto& pool = by_block[q];
    for (int k = 0; k < 25; ++k) {
      std::uniform_int_distribution<int> pick(k, static_cast<int>(pool.size()) - 1);
      std::swap(pool[k], pool[pick(audit_rng)]);
      const int ok = pop.mislinked[pool[k]] ? 0 : 1;
      audit << pop.block_ids[q] << ',' << ok << '\n';
      ++m[q];
      correct[q] += ok;
    }
  }

  // Paradata with the design lambdas and the audit counts.
  std::ofstream para(dir / "paradata.csv");
  para << "block_id,lambda,m_q,correct_q\n";
  for (int q = 0; q < pop.num_blocks(); ++q) {
    para << pop.block_ids[q] << ',' << sae::format_double(pop.block_lambda[q]) << ',' << m[q] << ','
         << correct[q] << '\n';
  }

  std::ofstream reg(dir / "population.csv");
  reg << "unit_id,area_id,block_id,x1\n";
  for (int j = 0; j < pop.size(); ++j) {
    reg << pop.unit_ids[j] << ',' << pop.area_ids[pop.area_of[j]] << ',' << pop.block_ids[pop.block_of[j]] << ','
        << sae::format_double(pop.X(j, 1)) << '\n';
  }

  std::ofstream truth(dir / "area_means.csv");
  truth << "area_id,mean_y\n";
  const sae::Vector means = pop.area_means();
  for (int i = 0; i < pop.num_areas(); ++i) truth << pop.area_ids[i] << ',' << sae::format_double(means(i)) << '\n';
  return 0;
}
