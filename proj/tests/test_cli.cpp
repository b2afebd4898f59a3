#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sae/config.hpp"
#include "sae/io.hpp"
#include "sae/lmm.hpp"
#include "sae/population.hpp"
#include "sae/rng.hpp"
#include "support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace sae;

namespace {

const std::string example_dir = std::string(SAE_SOURCE_DIR) + "/data/example40";

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sae_cli_" + std::to_string(std::random_device{}()));
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

struct Run {
  int code;
  std::string err;
};

Run sae_run(const std::string& args, const TempDir& d) {
  const std::string err = d / "stderr.txt";
  const std::string cmd = std::string("\"") + SAE_BINARY + "\" " + args + " >/dev/null 2>\"" + err + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream f(err);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

// Writes a small linked sample with all block lambdas equal to `lambda`.
void write_fixture(const TempDir& d, double lambda) {
  const LinkedSample s = test::synthetic_sample(8, 40, 5, {lambda, lambda}, 23);
  std::vector<std::string> ids;
  for (int j = 0; j < s.size(); ++j) ids.push_back(std::to_string(j + 1));
  write_sample_files(s, ids, d / "sample.csv", d / "paradata.csv", d / "aggregates.csv");
}

std::string fit_args(const TempDir& d, const std::string& out) {
  return "fit --sample " + quoted(d / "sample.csv") + " --paradata " + quoted(d / "paradata.csv") +
         " --aggregates " + quoted(d / "aggregates.csv") + " --out " + quoted(d / out);
}

}  // namespace

TEST_CASE("perfect linkage fit equals the classical EBLUP written by the library") {
  TempDir d;
  write_fixture(d, 1.0);
  REQUIRE(sae_run(fit_args(d, "out") + " --method eblup-star", d).code == 0);

  const LoadedSample data = load_linked_sample(d / "sample.csv", d / "paradata.csv", d / "aggregates.csv");
  const LinkedSample classical = with_perfect_linkage(data.sample);
  const MixedFit fit = fit_lmm_linked(classical);
  auto pred = predict_means_eblup(fit, classical, EblupVariant::star);
  const auto m = mse_eblup_star(fit, classical);
  for (int i = 0; i < classical.num_areas(); ++i) {
    pred[i].mse = m[i].total;
    pred[i].components = {m[i].g1, m[i].g2, m[i].g3, m[i].g4};
  }
  write_predictions(d / "classical.csv", classical.area_ids, pred, {"g1", "g2", "g3", "g4"});
  CHECK(slurp(d / "out/predictions.csv") == slurp(d / "classical.csv"));

  REQUIRE(fit.delta.sigma2_u > 0.0);

  // The second variant takes another code path; equal up to rounding.
  REQUIRE(sae_run(fit_args(d, "out2") + " --method eblup-starstar", d).code == 0);
  const CsvTable a = read_csv(d / "out2/predictions.csv"), b = read_csv(d / "classical.csv");
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    for (int c = 2; c < static_cast<int>(a.header.size()); ++c) {
      CHECK(std::abs(a.number(r, c) - b.number(r, c)) <= 1e-10 * (1.0 + std::abs(b.number(r, c))));
    }
  }
}

TEST_CASE("fit writes predictions for every method") {
  TempDir d;
  write_fixture(d, 0.8);
  for (const std::string method : {"eblup-star", "eblup-starstar", "reblup-star", "mq-star"}) {
    CAPTURE(method);
    const Run r = sae_run(fit_args(d, method) + " --method " + method, d);
    REQUIRE(r.code == 0);
    const CsvTable t = read_csv(d / (method + "/predictions.csv"));
    CHECK(t.rows.size() == 8);
    const int cp = t.column("point"), cm = t.column("mse");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      CHECK(t.number(i, cp) > 0.0);
      CHECK(t.number(i, cm) >= 0.0);
    }
    CHECK(fs::exists(d / (method + "/summary.json")));
  }
  const Run off = sae_run(fit_args(d, "nomse") + " --mse off", d);
  REQUIRE(off.code == 0);
  const CsvTable t = read_csv(d / "nomse/predictions.csv");
  CHECK(t.text(0, t.column("mse")) == "NA");
}

TEST_CASE("missing lambda for a sampled block exits with an input error") {
  TempDir d;
  write_fixture(d, 0.9);
  d.file("paradata.csv", "block_id,lambda\n1,0.9\n");
  const Run r = sae_run(fit_args(d, "out"), d);
  CHECK(r.code == 2);
  CHECK(r.err.find("has no lambda in the paradata") != std::string::npos);
}

TEST_CASE("schema violations exit with an input error naming the column") {
  TempDir d;
  write_fixture(d, 0.9);
  std::string sample = slurp(d / "sample.csv");
  sample.replace(sample.find("y_star"), 6, "ystar");
  d.file("sample.csv", sample);
  const Run r = sae_run(fit_args(d, "out"), d);
  CHECK(r.code == 2);
  CHECK(r.err.find("y_star") != std::string::npos);

  CHECK(sae_run("fit --sample " + quoted(d / "absent.csv"), d).code == 2);
  CHECK(sae_run("unknown-command", d).code == 2);
  CHECK(sae_run("--help", d).code == 0);
}

TEST_CASE("audit-lambda writes paradata and rejects blocks without audit rows") {
  TempDir d;
  d.file("audit.csv", "block_id,m_q,correct_q\nA,25,20\nB,25,25\n");
  REQUIRE(sae_run("audit-lambda --audit " + quoted(d / "audit.csv") + " --out " + quoted(d / "p/para.csv"), d).code == 0);
  const Paradata p = read_paradata(d / "p/para.csv");
  REQUIRE(p.lambda.size() == 2);
  CHECK(p.lambda[0] == doctest::Approx(0.8));
  CHECK(p.var_lambda[0] == doctest::Approx(0.8 * 0.2 / 25));
  CHECK(p.lambda[1] == 1.0);

  d.file("expected.csv", "block_id,lambda\nA,0.8\nB,1\nC,0.5\n");
  const Run r = sae_run("audit-lambda --audit " + quoted(d / "audit.csv") + " --paradata " +
                            quoted(d / "expected.csv") + " --out " + quoted(d / "p2.csv"),
                        d);
  CHECK(r.code == 2);
  CHECK(r.err.find("block C has no audit rows") != std::string::npos);

  d.file("zero.csv", "block_id,m_q,correct_q\nA,0,0\n");
  CHECK(sae_run("audit-lambda --audit " + quoted(d / "zero.csv") + " --out " + quoted(d / "p3.csv"), d).code == 2);
}

TEST_CASE("simulate: small R warns, same seed reproduces files, bad keys exit 2") {
  TempDir d;
  const std::string cfg = d.file("s.toml",
                                 "scenario = \"e,u\"\nareas = 8\narea_size = 40\nunits_per_block = 10\n"
                                 "replicates = 1\nbase_seed = 5\n");
  const Run one = sae_run("simulate --quiet --config " + quoted(cfg) + " --out " + quoted(d / "r1"), d);
  REQUIRE(one.code == 0);
  CHECK(one.err.find("warning: only 1 replicate") != std::string::npos);
  CHECK(fs::exists(d / "r1/table1.csv"));
  CHECK(fs::exists(d / "r1/table2.csv"));
  CHECK(fs::exists(d / "r1/summary.json"));

  const std::string opts = " --quiet --replicates 3 --dump-replicates --config " + quoted(cfg);
  REQUIRE(sae_run("simulate" + opts + " --out " + quoted(d / "a"), d).code == 0);
  REQUIRE(sae_run("simulate --serial" + opts + " --out " + quoted(d / "b"), d).code == 0);
  for (const std::string f : {"table1.csv", "table2.csv", "summary.json", "replicates.csv"}) {
    CAPTURE(f);
    CHECK(slurp(d / ("a/" + f)) == slurp(d / ("b/" + f)));
  }
  REQUIRE(sae_run("simulate" + opts + " --seed 6 --out " + quoted(d / "c"), d).code == 0);
  CHECK(slurp(d / "a/replicates.csv") != slurp(d / "c/replicates.csv"));

  const std::string bad = d.file("bad.toml", "areas = 8\nreplicats = 3\n");
  const Run r = sae_run("simulate --config " + quoted(bad), d);
  CHECK(r.code == 2);
  CHECK(r.err.find("replicats") != std::string::npos);
}

TEST_CASE("simulate on a fixed register samples only") {
  TempDir d;
  const std::string cfg_text = "scenario = \"0,0\"\nareas = 6\narea_size = 50\nunits_per_block = 25\n"
                               "lambdas = [1.0, 0.7]\nreplicates = 3\nbase_seed = 9\n";
  const std::string cfg = d.file("s.toml", cfg_text);
  const ScenarioConfig sc = parse_scenario(cfg_text);
  Rng pop_rng = make_stream(1, 0, Stage::population), link_rng = make_stream(1, 0, Stage::linkage);
  PopulationFrame pop = generate_population(sc, pop_rng);
  apply_linkage(pop, link_rng);
  write_population(pop, d / "pop.csv");
  d.file("para.csv", "block_id,lambda\n1,1\n2,0.7\n");

  const std::string args = " --quiet --dump-replicates --config " + quoted(cfg) + " --population " +
                           quoted(d / "pop.csv") + " --paradata " + quoted(d / "para.csv");
  REQUIRE(sae_run("simulate" + args + " --out " + quoted(d / "a"), d).code == 0);
  REQUIRE(sae_run("simulate --serial" + args + " --out " + quoted(d / "b"), d).code == 0);
  CHECK(slurp(d / "a/replicates.csv") == slurp(d / "b/replicates.csv"));

  // The truth column is the register's own area means in every replicate.
  const CsvTable t = read_csv(d / "a/replicates.csv");
  const Vector means = pop.area_means();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int area = static_cast<int>(t.number(r, t.column("area_id"))) - 1;
    CHECK(t.number(r, t.column("truth")) == doctest::Approx(means(area)).epsilon(1e-12));
  }

  std::string no_y = slurp(d / "pop.csv");
  no_y.replace(no_y.find(",y,"), 3, ",w,");
  d.file("pop_no_y.csv", no_y);
  const Run r = sae_run("simulate --quiet --config " + quoted(cfg) + " --population " + quoted(d / "pop_no_y.csv") +
                            " --paradata " + quoted(d / "para.csv") + " --out " + quoted(d / "c"),
                        d);
  CHECK(r.code == 2);
  CHECK(r.err.find("needs a y column") != std::string::npos);
  CHECK(sae_run("simulate --config " + quoted(cfg) + " --population " + quoted(d / "pop.csv"), d).code == 2);
}

TEST_CASE("bundled 40-area example reproduces the stored outputs") {
  TempDir d;
  const std::string base = " --sample " + quoted(example_dir + "/sample.csv") + " --paradata " +
                           quoted(example_dir + "/paradata.csv");
  for (const std::string method : {"eblup-star", "eblup-starstar", "reblup-star", "mq-star"}) {
    CAPTURE(method);
    const std::string out = d / method;
    REQUIRE(sae_run("fit" + base + " --aggregates " + quoted(example_dir + "/aggregates.csv") + " --method " +
                        method + " --out " + quoted(out),
                    d)
                .code == 0);
    CHECK(slurp(out + "/predictions.csv") == slurp(example_dir + "/golden/" + method + "/predictions.csv"));
    CHECK(slurp(out + "/summary.json") == slurp(example_dir + "/golden/" + method + "/summary.json"));
  }
  const std::string out = d / "predict";
  REQUIRE(sae_run("predict" + base + " --population " + quoted(example_dir + "/population.csv") +
                      " --method eblup-star --out " + quoted(out),
                  d)
              .code == 0);
  CHECK(slurp(out + "/predictions.csv") == slurp(example_dir + "/golden/eblup-star/predictions.csv"));
}
