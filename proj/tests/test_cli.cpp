#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ssnocc_cli_test";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" SSNOCC_CLI "\" " + args + " >>\"" + (kRoot / "log.txt").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// draws.csv with two chains of `n` draws of beta0 and p.
void write_draws(const fs::path& dir, bool mixed) {
  fs::create_directories(dir);
  std::ofstream out(dir / "draws.csv");
  out << "chain,iteration,beta0,p\n";
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 1000; ++i) {
      const double b = mixed ? z(rng) : static_cast<double>(c);
      const double p = mixed ? 0.5 + 0.05 * z(rng) : 0.3 + 0.4 * c;
      out << c << ',' << i << ',' << b << ',' << p << '\n';
    }
}

std::string data_args(const fs::path& rep) {
  return "--network " + (rep / "network.csv").string() + " --sites " + (rep / "sites.csv").string() +
         " --detections " + (rep / "detections.csv").string() + " --covariates " +
         (rep / "truth.csv").string() + " --covariate-columns x";
}

struct Setup {
  Setup() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};
const Setup setup;

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("simulate --out " + (kRoot / "v0").string() + " --visits 0") == 2);
  CHECK(run("fit --network a.csv") == 2);
  CHECK(run("--version") == 0);
  CHECK(run("--help") == 0);
}

TEST_CASE("simulate, fit, predict and diagnose") {
  const auto sim = kRoot / "sim";
  REQUIRE(run("simulate --out " + sim.string() + " --sites 12 --visits 3 --replicates 2 --seed 5") == 0);
  const auto rep = sim / "rep_001";
  for (const char* f : {"network.csv", "sites.csv", "detections.csv", "truth.csv", "manifest.json"})
    CHECK(fs::exists(rep / f));
  CHECK(fs::exists(sim / "rep_002" / "manifest.json"));
  CHECK(fs::exists(sim / "manifest.json"));
  CHECK(slurp(sim / "manifest.json").find("ssnocc-manifest-v1") != std::string::npos);

  const auto fit = kRoot / "fit";
  const std::string sampler = " --chains 2 --iters 600 --burnin 200 --seed 9 --workers 1";
  REQUIRE(run("fit " + data_args(rep) + sampler + " --out " + fit.string()) == 0);
  CHECK(fs::exists(fit / "draws.csv"));
  CHECK(fs::exists(fit / "summary.json"));
  const auto manifest = slurp(fit / "manifest.json");
  CHECK(manifest.find("sha256") != std::string::npos);
  CHECK(manifest.find("priors") != std::string::npos);

  SUBCASE("fit data errors exit 3") {
    CHECK(run("fit --network " + (kRoot / "none.csv").string() + " --sites x --detections y --out " +
              (kRoot / "f3").string()) == 3);
    {
      std::ofstream(kRoot / "bad_sites.csv") << "site_id,edge_id,dist_to_downstream_km\ns001,nope,1\n";
    }
    CHECK(run("fit --network " + (rep / "network.csv").string() + " --sites " + (kRoot / "bad_sites.csv").string() +
              " --detections " + (rep / "detections.csv").string() + " --out " + (kRoot / "f4").string()) == 3);
    CHECK(run("fit " + data_args(rep) + " --model other --out " + (kRoot / "f5").string()) == 2);
  }
  SUBCASE("predict") {
    const auto out = kRoot / "pred";
    CHECK(run("predict --fit " + fit.string() + " --out " + out.string()) == 0);
    const auto rows = read_rows(out / "predictions.csv");
    REQUIRE(rows.size() == 13);
    CHECK(rows[0] == std::vector<std::string>{"site_id", "observed", "psi_mean", "psi_q2.5", "psi_q97.5"});
    CHECK(run("predict --fit " + fit.string() + " --thin 5000 --out " + out.string()) == 2);
    CHECK(run("predict --fit " + (kRoot / "nofit").string() + " --out " + out.string()) == 3);
  }
  SUBCASE("diagnose on a real fit") {
    const int code = run("diagnose --fit " + fit.string());
    CHECK((code == 0 || code == 1));
    CHECK(fs::exists(fit / "diagnostics" / "diagnostics.csv"));
    CHECK(fs::exists(fit / "diagnostics" / "manifest.json"));
  }
}

TEST_CASE("diagnose exit codes on injected draws") {
  const auto good = kRoot / "diag_good";
  write_draws(good, true);
  CHECK(run("diagnose --fit " + good.string() + " --out " + (good / "out").string()) == 0);
  const auto table = read_rows(good / "out" / "diagnostics.csv");
  REQUIRE(table.size() == 3);
  CHECK(table[0] == std::vector<std::string>{"parameter", "rhat", "ess", "mean", "sd", "q2.5", "q97.5"});
  for (std::size_t i = 1; i < table.size(); ++i) CHECK(std::stod(table[i][1]) < 1.1);
  CHECK(read_rows(good / "out" / "traces.csv")[0] ==
        std::vector<std::string>{"parameter", "chain", "iteration", "value"});
  CHECK(read_rows(good / "out" / "densities.csv")[0] ==
        std::vector<std::string>{"parameter", "chain", "x", "density"});

  const auto bad = kRoot / "diag_bad";
  write_draws(bad, false);
  CHECK(run("diagnose --fit " + bad.string() + " --out " + (bad / "out").string()) == 1);
  const auto bad_table = read_rows(bad / "out" / "diagnostics.csv");
  REQUIRE(bad_table.size() == 3);
  for (std::size_t i = 1; i < bad_table.size(); ++i) CHECK(std::stod(bad_table[i][1]) > 1.1);

  CHECK(run("diagnose --fit " + (kRoot / "empty_fit").string()) == 3);
}

TEST_CASE("fixed seeds give byte-identical outputs") {
  const std::string design = " --sites 10 --visits 3 --replicates 1";
  const auto a = kRoot / "det_a";
  const auto b = kRoot / "det_b";
  REQUIRE(run("simulate --out " + a.string() + design + " --seed 77") == 0);
  REQUIRE(run("simulate --out " + b.string() + design + " --seed 77") == 0);
  for (const char* f : {"network.csv", "sites.csv", "detections.csv", "truth.csv"})
    CHECK(slurp(a / "rep_001" / f) == slurp(b / "rep_001" / f));

  const std::string sampler = " --chains 2 --iters 400 --burnin 100 --seed 3 --workers 1";
  REQUIRE(run("fit " + data_args(a / "rep_001") + sampler + " --out " + (a / "fit").string()) == 0);
  REQUIRE(run("fit " + data_args(a / "rep_001") + sampler + " --out " + (b / "fit").string()) == 0);
  CHECK(slurp(a / "fit" / "draws.csv") == slurp(b / "fit" / "draws.csv"));

  // The environment seed overrides --seed.
  const auto c = kRoot / "det_c";
  REQUIRE(run("simulate --out " + c.string() + design + " --seed 1", "SSNOCC_SEED=77") == 0);
  CHECK(slurp(a / "rep_001" / "detections.csv") == slurp(c / "rep_001" / "detections.csv"));
  const auto d = kRoot / "det_d";
  REQUIRE(run("simulate --out " + d.string() + design + " --seed 78") == 0);
  CHECK(slurp(a / "rep_001" / "truth.csv") != slurp(d / "rep_001" / "truth.csv"));
}

TEST_CASE("unwritable output exits 2") {
  { std::ofstream(kRoot / "blocker") << "x"; }
  CHECK(run("simulate --out " + (kRoot / "blocker" / "sub").string() + " --sites 5 --replicates 1") == 2);
}
