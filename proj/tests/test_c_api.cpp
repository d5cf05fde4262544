#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "ssnocc/ssnocc.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ssnocc_capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  ssnocc_string_free(s);
  return out;
}

ssnocc_sampler_config quick_sampler() {
  ssnocc_sampler_config c;
  ssnocc_sampler_default(&c);
  c.n_iterations = 600;
  c.n_burnin = 200;
  c.seed = 61;
  return c;
}

}  // namespace

TEST_CASE("version and defaults") {
  CHECK(std::strlen(ssnocc_version()) > 0);
  ssnocc_design d;
  ssnocc_design_default(&d);
  CHECK(d.n_sites == 100);
  CHECK(d.n_beta == 2);
  CHECK(d.true_beta[1] == 1.0);
  CHECK(ssnocc_design_validate(&d) == SSNOCC_OK);
  ssnocc_sampler_config c;
  ssnocc_sampler_default(&c);
  CHECK(ssnocc_sampler_validate(&c) == SSNOCC_OK);

  char* js = nullptr;
  REQUIRE(ssnocc_design_json(&d, &js) == SSNOCC_OK);
  CHECK(take(js).find("true_theta") != std::string::npos);
}

TEST_CASE("invalid configurations report usage errors") {
  ssnocc_design d;
  ssnocc_design_default(&d);
  d.n_visits = 0;
  CHECK(ssnocc_design_validate(&d) == SSNOCC_ERR_USAGE);
  CHECK(std::string(ssnocc_last_error()).find("n_visits") != std::string::npos);
  d.n_visits = 5;
  d.n_beta = SSNOCC_MAX_BETA + 1;
  CHECK(ssnocc_design_validate(&d) == SSNOCC_ERR_USAGE);

  ssnocc_sampler_config c;
  ssnocc_sampler_default(&c);
  c.thin = 0;
  CHECK(ssnocc_sampler_validate(&c) == SSNOCC_ERR_USAGE);
  CHECK(ssnocc_sampler_validate(nullptr) == SSNOCC_ERR_USAGE);
}

TEST_CASE("simulate, load, fit, predict and diagnose") {
  const auto dir = fresh_dir("flow");
  ssnocc_design d;
  ssnocc_design_default(&d);
  d.n_sites = 15;
  d.n_visits = 3;
  REQUIRE(ssnocc_simulate_replicate(&d, 1, dir.c_str()) == SSNOCC_OK);
  for (const char* f : {"network.csv", "sites.csv", "detections.csv", "truth.csv"}) CHECK(fs::exists(dir / f));

  const std::string net = (dir / "network.csv").string();
  const std::string sites = (dir / "sites.csv").string();
  const std::string det = (dir / "detections.csv").string();
  const std::string truth = (dir / "truth.csv").string();
  const char* cols[] = {"x"};
  ssnocc_dataset* data = nullptr;
  REQUIRE(ssnocc_dataset_load(net.c_str(), sites.c_str(), det.c_str(), truth.c_str(), cols, 1, &data) ==
          SSNOCC_OK);
  CHECK(ssnocc_dataset_n_sites(data) == 15);
  double dmax = 0.0;
  CHECK(ssnocc_dataset_max_distance(data, &dmax) == SSNOCC_OK);
  CHECK(dmax > 0.0);

  const auto cfg = quick_sampler();
  ssnocc_fit* fit = nullptr;
  REQUIRE(ssnocc_fit_run(data, SSNOCC_MODEL_TAILDOWN, &cfg, 1, &fit) == SSNOCC_OK);
  const auto fit_dir = dir / "fit";
  REQUIRE(ssnocc_fit_write(fit, fit_dir.c_str()) == SSNOCC_OK);
  char* js = nullptr;
  REQUIRE(ssnocc_fit_summary_json(fit, &js) == SSNOCC_OK);
  CHECK(take(js).find("\"theta_over_sigma2\"") != std::string::npos);
  const int conv = ssnocc_fit_converged(fit);
  CHECK((conv == 0 || conv == 1));
  ssnocc_fit_free(fit);

  size_t rows = 0;
  const auto pred = dir / "pred.csv";
  CHECK(ssnocc_predict(fit_dir.c_str(), nullptr, nullptr, nullptr, nullptr, 1, 1, pred.c_str(), &rows) ==
        SSNOCC_OK);
  CHECK(rows == 15);
  CHECK(ssnocc_predict(fit_dir.c_str(), nullptr, nullptr, nullptr, nullptr, 100000, 1, pred.c_str(), &rows) ==
        SSNOCC_ERR_USAGE);

  int pass = -1;
  char* table = nullptr;
  CHECK(ssnocc_diagnose(fit_dir.c_str(), (dir / "diag").c_str(), &pass, &table) == SSNOCC_OK);
  CHECK((pass == 0 || pass == 1));
  CHECK(take(table).find("rhat") != std::string::npos);

  ssnocc_fit* flat = nullptr;
  REQUIRE(ssnocc_fit_run(data, SSNOCC_MODEL_NONSPATIAL, &cfg, 0, &flat) == SSNOCC_OK);
  ssnocc_fit_free(flat);
  ssnocc_dataset_free(data);
}

TEST_CASE("data errors") {
  const auto dir = fresh_dir("errors");
  ssnocc_dataset* data = nullptr;
  const auto missing = (dir / "missing.csv").string();
  CHECK(ssnocc_dataset_load(missing.c_str(), missing.c_str(), missing.c_str(), nullptr, nullptr, 0, &data) ==
        SSNOCC_ERR_DATA);
  CHECK(data == nullptr);
  CHECK(std::string(ssnocc_last_error()).find("cannot open") != std::string::npos);

  {
    std::ofstream(dir / "network.csv") << "edge_id,upstream_node,downstream_node,length_km\nE1,A,O,2\n";
    std::ofstream(dir / "sites.csv") << "site_id,edge_id,dist_to_downstream_km\ns1,E9,1\n";
    std::ofstream(dir / "det.csv") << "site_id,visit,detected\ns1,1,0\n";
  }
  CHECK(ssnocc_dataset_load((dir / "network.csv").c_str(), (dir / "sites.csv").c_str(),
                            (dir / "det.csv").c_str(), nullptr, nullptr, 0, &data) == SSNOCC_ERR_DATA);
  CHECK(ssnocc_dataset_load(nullptr, nullptr, nullptr, nullptr, nullptr, 0, &data) == SSNOCC_ERR_USAGE);

  char* hex = nullptr;
  CHECK(ssnocc_sha256_file(missing.c_str(), &hex) == SSNOCC_ERR_DATA);
  int pass = 0;
  CHECK(ssnocc_diagnose(dir.c_str(), (dir / "d").c_str(), &pass, nullptr) == SSNOCC_ERR_DATA);
}

TEST_CASE("unwritable output") {
  const auto dir = fresh_dir("output");
  std::ofstream(dir / "file") << "x";
  ssnocc_design d;
  ssnocc_design_default(&d);
  d.n_sites = 5;
  CHECK(ssnocc_simulate_replicate(&d, 1, (dir / "file" / "sub").c_str()) == SSNOCC_ERR_OUTPUT);
}

TEST_CASE("last error is cleared by a successful call") {
  CHECK(ssnocc_sampler_validate(nullptr) == SSNOCC_ERR_USAGE);
  CHECK(std::strlen(ssnocc_last_error()) > 0);
  ssnocc_sampler_config c;
  ssnocc_sampler_default(&c);
  CHECK(ssnocc_sampler_validate(&c) == SSNOCC_OK);
  CHECK(std::strlen(ssnocc_last_error()) == 0);
}
