#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sae/config.hpp"
#include "sae/error.hpp"
#include "sae/io.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

namespace fs = std::filesystem;
using namespace sae;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sae_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const auto p = (path / name).string();
    std::ofstream(p) << content;
    return p;
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("csv reader handles quotes, blank lines and whitespace") {
  TempDir d;
  const auto p = d.file("a.csv", "id,name,v\n1,\"Smith, J\",2.5\n\n 2 , \"say \"\"hi\"\"\" ,3\n");
  const CsvTable t = read_csv(p);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.text(0, 1) == "Smith, J");
  CHECK(t.text(1, 0) == "2");
  CHECK(t.text(1, 1) == "say \"hi\"");
  CHECK(t.number(0, 2) == 2.5);
  CHECK(t.integer(1, 2) == 3);
  CHECK(t.has("name"));
  CHECK_FALSE(t.has("missing"));
  CHECK_THROWS_AS(t.column("missing"), InputError);
}

TEST_CASE("csv reader rejects ragged rows, bad numbers and empty files") {
  TempDir d;
  CHECK_THROWS_AS(read_csv(d.file("r.csv", "a,b\n1,2\n3\n")), InputError);
  CHECK_THROWS_AS(read_csv(d.file("e.csv", "\n\n")), InputError);
  CHECK_THROWS_AS(read_csv(d / "absent.csv"), InputError);
  const CsvTable t = read_csv(d.file("n.csv", "a,b\nx,1.5\ninf,NA\n"));
  CHECK_THROWS_AS(t.number(0, 0), InputError);
  CHECK_THROWS_AS(t.number(1, 0), InputError);
  CHECK_THROWS_AS(t.integer(0, 1), InputError);
  try {
    t.number(1, 1);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("column 'b' row 3") != std::string::npos);
  }
}

TEST_CASE("covariate columns are x1..xp without gaps") {
  TempDir d;
  const auto ok = read_csv(d.file("ok.csv", "unit_id,x2,x1,y_star,xray\n1,2,3,4,5\n"));
  CHECK(covariate_columns(ok) == std::vector<std::string>{"x1", "x2"});
  const auto none = read_csv(d.file("none.csv", "unit_id,y_star\n1,4\n"));
  CHECK(covariate_columns(none).empty());
  const auto gap = read_csv(d.file("gap.csv", "unit_id,x1,x3,y_star\n1,2,3,4\n"));
  CHECK_THROWS_AS(covariate_columns(gap), InputError);
}

TEST_CASE("paradata reader") {
  TempDir d;
  const Paradata p = read_paradata(d.file("p.csv", "block_id,lambda,var_lambda\nA,0.9,0.001\nB,1,0\n"));
  CHECK(p.block_ids == std::vector<std::string>{"A", "B"});
  CHECK(p.lambda == std::vector<double>{0.9, 1.0});
  CHECK(p.var_lambda == std::vector<double>{0.001, 0.0});
  CHECK(p.audit.empty());
  CHECK(p.find("B") == 1);
  CHECK(p.find("C") == -1);

  const Paradata a = read_paradata(d.file("pa.csv", "block_id,lambda,m_q,correct_q\nA,0.8,25,20\n"));
  REQUIRE(a.audit.size() == 1);
  CHECK(a.audit[0].m == 25);
  CHECK(a.audit[0].correct == 20);
  CHECK(a.var_lambda.empty());

  CHECK_THROWS_AS(read_paradata(d.file("b1.csv", "block_id,lambda\nA,1.2\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b2.csv", "block_id,lambda\nA,0.5\nA,0.6\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b3.csv", "block_id,lambda,var_lambda\nA,0.5,-1\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b4.csv", "block_id,lambda\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b5.csv", "block_id,lambda,m_q,correct_q\nA,0.5,0,0\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b6.csv", "block_id,lambda,m_q,correct_q\nA,0.5,4,5\n")), InputError);
  CHECK_THROWS_AS(read_paradata(d.file("b7.csv", "block,lambda\nA,0.5\n")), InputError);
}

TEST_CASE("audit reader accepts per-link and per-block layouts") {
  TempDir d;
  const auto links = read_audit(d.file("l.csv", "block_id,correct\nA,1\nA,0\nB,1\nA,1\n"));
  REQUIRE(links.size() == 2);
  CHECK(links[0].block_id == "A");
  CHECK(links[0].m == 3);
  CHECK(links[0].correct == 2);
  CHECK(links[1].m == 1);
  CHECK(links[1].correct == 1);

  const auto blocks = read_audit(d.file("b.csv", "block_id,m_q,correct_q\nA,10,9\nB,5,5\nA,2,1\n"));
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].m == 12);
  CHECK(blocks[0].correct == 10);

  CHECK_THROWS_AS(read_audit(d.file("x1.csv", "block_id,correct\nA,2\n")), InputError);
  CHECK_THROWS_AS(read_audit(d.file("x2.csv", "block_id,m_q,correct_q\nA,0,0\n")), InputError);
  CHECK_THROWS_AS(read_audit(d.file("x3.csv", "block_id,m_q,correct_q\nA,3,4\n")), InputError);
}

TEST_CASE("sample files roundtrip through the loader") {
  TempDir d;
  PopulationFrame pop;
  const LinkedSample s = test::synthetic_sample(6, 20, 4, {1.0, 0.7}, 31, Scenario::gaussian, 0, &pop);
  std::vector<std::string> ids;
  for (int j = 0; j < s.size(); ++j) ids.push_back("u" + std::to_string(j));
  write_sample_files(s, ids, d / "s.csv", d / "p.csv", d / "a.csv", {0.0, 0.004});
  const LoadedSample l = load_linked_sample(d / "s.csv", d / "p.csv", d / "a.csv");
  const LinkedSample& t = l.sample;
  CHECK(l.unit_ids == ids);
  CHECK(l.covariates == std::vector<std::string>{"x1"});
  CHECK(l.lambda_variance == std::vector<double>{0.0, 0.004});
  CHECK(t.X == s.X);
  CHECK(t.y_star == s.y_star);
  CHECK(t.X_star == s.X_star);
  CHECK(t.area_of == s.area_of);
  CHECK(t.block_of == s.block_of);
  CHECK(t.block_lambda == s.block_lambda);
  REQUIRE(t.num_areas() == s.num_areas());
  for (int i = 0; i < s.num_areas(); ++i) {
    CHECK(t.areas[i].N == s.areas[i].N);
    CHECK(t.areas[i].xbar_r_star == s.areas[i].xbar_r_star);
  }
}

TEST_CASE("population register gives the same cell aggregates") {
  TempDir d;
  PopulationFrame pop;
  ScenarioConfig cfg;
  cfg.areas = 5;
  cfg.area_size = 30;
  cfg.units_per_block = 10;
  cfg.lambdas = {1.0, 0.8, 0.5};
  Rng rng(8);
  pop = generate_population(cfg, rng);
  apply_linkage(pop, rng);
  std::vector<int> units;
  const LinkedSample s = draw_sample(pop, std::vector<int>(5, 4), rng, &units);
  std::vector<std::string> ids;
  for (int u : units) ids.push_back(pop.unit_ids[u]);
  write_sample_files(s, ids, d / "s.csv", d / "p.csv", d / "a.csv");
  write_population(pop, d / "pop.csv");

  const LoadedSample viaAgg = load_linked_sample(d / "s.csv", d / "p.csv", d / "a.csv");
  const LoadedSample viaPop = load_sample_with_population(d / "s.csv", d / "p.csv", d / "pop.csv");
  REQUIRE(viaPop.sample.num_areas() == viaAgg.sample.num_areas());
  CHECK(viaPop.sample.X_star.isApprox(viaAgg.sample.X_star, 1e-12));
  for (int i = 0; i < viaAgg.sample.num_areas(); ++i) {
    CHECK(viaPop.sample.areas[i].N == viaAgg.sample.areas[i].N);
    CHECK(viaPop.sample.areas[i].n == viaAgg.sample.areas[i].n);
    CHECK(viaPop.sample.areas[i].xbar.isApprox(viaAgg.sample.areas[i].xbar, 1e-12));
  }

  const Paradata para = read_paradata(d / "p.csv");
  const PopulationFrame back = read_population(d / "pop.csv", para);
  CHECK(back.X == pop.X);
  CHECK(back.y == pop.y);
  CHECK(back.y_star == pop.y_star);
}

TEST_CASE("loader errors name the offending block or area") {
  TempDir d;
  const std::string sample = d.file("s.csv", "unit_id,area_id,block_id,x1,y_star\n1,a,B1,2,10\n2,a,B2,3,12\n3,b,B1,1,9\n");
  const std::string para = d.file("p.csv", "block_id,lambda\nB1,1\n");
  const std::string para2 = d.file("p2.csv", "block_id,lambda\nB1,1\nB2,0.8\n");
  const std::string agg = d.file("a.csv",
                                 "area_id,block_id,N_iq,n_iq,xbar_iq_1\na,B1,10,1,2\na,B2,10,1,3\nb,B1,10,1,1\n");
  const std::string agg_missing = d.file("am.csv", "area_id,block_id,N_iq,n_iq,xbar_iq_1\na,B1,10,1,2\na,B2,10,1,3\n");
  try {
    load_linked_sample(sample, para, agg);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("block B2 has no lambda in the paradata") != std::string::npos);
  }
  try {
    load_linked_sample(sample, para2, agg_missing);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("area b") != std::string::npos);
  }
  CHECK_NOTHROW(load_linked_sample(sample, para2, agg));

  const std::string agg_wide =
      d.file("aw.csv", "area_id,block_id,N_iq,n_iq,xbar_iq_1,xbar_iq_2\na,B1,10,1,2,0\na,B2,10,1,3,0\nb,B1,10,1,1,0\n");
  CHECK_THROWS_AS(load_linked_sample(sample, para2, agg_wide), InputError);

  const std::string pop = d.file("pop.csv", "unit_id,area_id,block_id,x1\n1,a,B1,2\n2,a,B2,3\n");
  CHECK_THROWS_AS(load_sample_with_population(sample, para2, pop), InputError);
  const std::string pop_moved = d.file("pm.csv", "unit_id,area_id,block_id,x1\n1,a,B1,2\n2,a,B1,3\n3,b,B1,1\n");
  CHECK_THROWS_AS(load_sample_with_population(sample, para2, pop_moved), InputError);
}

TEST_CASE("format_double reads back exactly") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double v = u(gen) * std::pow(10.0, static_cast<int>(gen() % 20) - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(std::nan("")) == "NA");
}

TEST_CASE("scenario parser reads every key") {
  const std::string text = R"(# comment line
scenario = "e,u"   # trailing comment
areas = 10
area_size = 40
sample_size = 4
units_per_block = 20
lambdas = [1.0, 0.5]
replicates = 7
base_seed = 99
huber_c = 2.0
mse = false
tau_grid = [0.25, 0.5, 0.75]
estimators = ["EBLUP", "*MQ", "**EBLUP"]
beta0 = 1
beta1 = 2
x_meanlog = 0.5
x_sdlog = 0.25
sigma2_u = 4
sigma2_e = 5
outlier_areas = 2
sigma2_u_outlier = 30
sigma2_e_outlier = 100
contamination = 0.1
max_failure_rate = 0.05
)";
  const ScenarioConfig c = parse_scenario(text);
  CHECK(c.scenario == Scenario::outliers);
  CHECK(c.areas == 10);
  CHECK(c.area_size == 40);
  CHECK(c.sample_size == 4);
  CHECK(c.units_per_block == 20);
  CHECK(c.lambdas == std::vector<double>{1.0, 0.5});
  CHECK(c.replicates == 7);
  CHECK(c.base_seed == 99u);
  CHECK(c.huber_c == 2.0);
  CHECK_FALSE(c.mse);
  CHECK(c.tau_grid == std::vector<double>{0.25, 0.5, 0.75});
  CHECK(c.estimators == std::vector<Estimator>{Estimator::eblup, Estimator::mq_star, Estimator::eblup_starstar});
  CHECK(c.beta0 == 1.0);
  CHECK(c.beta1 == 2.0);
  CHECK(c.x_meanlog == 0.5);
  CHECK(c.x_sdlog == 0.25);
  CHECK(c.sigma2_u == 4.0);
  CHECK(c.sigma2_e == 5.0);
  CHECK(c.outlier_areas == 2);
  CHECK(c.sigma2_u_outlier == 30.0);
  CHECK(c.sigma2_e_outlier == 100.0);
  CHECK(c.contamination == 0.1);
  CHECK(c.max_failure_rate == 0.05);
}

TEST_CASE("scenario parser defaults match the simulation design") {
  const ScenarioConfig c = parse_scenario("");
  CHECK(c.areas == 40);
  CHECK(c.area_size == 100);
  CHECK(c.sample_size == 5);
  CHECK(c.units_per_block == 25);
  CHECK(c.lambdas == std::vector<double>{1.0, 0.9, 0.6, 0.4});
  CHECK(c.huber_c == 1.345);
  CHECK(c.estimators.size() == 7);
}

TEST_CASE("scenario parser rejects malformed input") {
  CHECK_THROWS_AS(parse_scenario("colour = 3"), InputError);
  CHECK_THROWS_AS(parse_scenario("areas = 3\nareas = 4"), InputError);
  CHECK_THROWS_AS(parse_scenario("areas"), InputError);
  CHECK_THROWS_AS(parse_scenario("areas = 3.5"), InputError);
  CHECK_THROWS_AS(parse_scenario("areas = 99999999999"), InputError);
  CHECK_THROWS_AS(parse_scenario("scenario = e,u"), InputError);
  CHECK_THROWS_AS(parse_scenario("scenario = \"x\""), InputError);
  CHECK_THROWS_AS(parse_scenario("mse = yes"), InputError);
  CHECK_THROWS_AS(parse_scenario("lambdas = 1, 0.5"), InputError);
  CHECK_THROWS_AS(parse_scenario("lambdas = [1, , 0.5]"), InputError);
  CHECK_THROWS_AS(parse_scenario("estimators = [\"BLUP\"]"), InputError);
  CHECK_THROWS_AS(parse_scenario("base_seed = -1"), InputError);
  CHECK_THROWS_AS(parse_scenario("lambdas = [1.5, 0.5, 0.5, 0.5]"), InputError);
  CHECK_THROWS_AS(parse_scenario("units_per_block = 30"), InputError);
  try {
    parse_scenario("huber_c = abc", "my.toml");
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string what = e.what();
    CHECK(what.find("my.toml") != std::string::npos);
    CHECK(what.find("huber_c") != std::string::npos);
  }
}

TEST_CASE("scenario names") {
  CHECK(parse_scenario_name("0,0") == Scenario::gaussian);
  CHECK(parse_scenario_name("(e,u)") == Scenario::outliers);
  CHECK(scenario_name(Scenario::outliers) == "e,u");
  CHECK_THROWS_AS(parse_scenario_name("u,e"), InputError);
  TempDir d;
  const auto p = d.file("c.toml", "scenario = \"0,0\"\nreplicates = 3\n");
  CHECK(read_scenario(p).replicates == 3);
  CHECK_THROWS_AS(read_scenario(d / "none.toml"), InputError);
}
