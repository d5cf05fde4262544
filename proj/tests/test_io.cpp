#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "ssnocc/csv.hpp"
#include "ssnocc/error.hpp"
#include "ssnocc/io.hpp"

using namespace ssnocc;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

bool message_contains(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
  } catch (const DataError& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

// Y-network data set with one covariate; s2 never detected.
DatasetPaths write_y_dataset(const fs::path& dir) {
  write_network_csv(dir / "network.csv", fixtures::y_network());
  write_sites_csv(dir / "sites.csv", fixtures::y_sites());
  write_detections_csv(dir / "detections.csv",
                       {{"s1", {0, 1, 0, 1}}, {"s2", {0, 0, 0, 0}}, {"s3", {1, 1, 0, 1}}});
  write_text(dir / "covariates.csv", "site_id,elev,flow\ns1,10,0.5\ns2,20,0.7\ns3,60,0.1\n");
  return {dir / "network.csv", dir / "sites.csv", dir / "detections.csv", dir / "covariates.csv"};
}

}  // namespace

TEST_CASE("csv quoting") {
  const auto t = parse_csv("a,b,c\n\"x, y\",\"say \"\"hi\"\"\",\"two\nlines\"\r\n1,,3\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "x, y");
  CHECK(t.rows[0][1] == "say \"hi\"");
  CHECK(t.rows[0][2] == "two\nlines");
  CHECK(t.rows[1][1].empty());
  CHECK(t.find("c") == 2);
  CHECK(t.find("d") == CsvTable::npos);
  CHECK_THROWS_AS(t.require("d", "test"), DataError);

  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("q\"q") == "\"q\"\"q\"");

  std::ostringstream out;
  const std::vector<std::string> row{"x, y", "say \"hi\"", "two\nlines"};
  write_csv_row(out, std::vector<std::string>{"a", "b", "c"});
  write_csv_row(out, row);
  CHECK(parse_csv(out.str()).rows[0] == row);

  CHECK_THROWS_AS(parse_csv("a,b\n\"open,1\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1,2,3\n"), DataError);
  CHECK_THROWS_AS(parse_csv(""), DataError);
  CHECK_THROWS_AS(parse_double("1.5x", "test"), DataError);
  CHECK(parse_double("2.5e-3", "test") == 2.5e-3);
  CHECK(format_double(0.1, 17) == "0.10000000000000001");
}

TEST_CASE("network, site and detection files round trip") {
  const auto dir = fixtures::temp_dir("io_roundtrip");
  const auto paths = write_y_dataset(dir);
  const auto net = read_network_csv(paths.network);
  REQUIRE(net.edges.size() == 3);
  CHECK(net.outlet_node == "O");
  CHECK(net.edges[2].length == 7.0);
  const auto sites = read_sites_csv(paths.sites);
  CHECK(sites.sites.size() == 3);
  CHECK_FALSE(sites.coords.has_value());
  const auto hs = read_detections_csv(paths.detections);
  REQUIRE(hs.size() == 3);
  CHECK(hs[2].visits == std::vector<std::uint8_t>{1, 1, 0, 1});

  SUBCASE("long format accepts any row order") {
    write_text(dir / "d2.csv", "site_id,visit,detected\nb,2,1\na,1,0\nb,1,0\n");
    const auto h = read_detections_csv(dir / "d2.csv");
    REQUIRE(h.size() == 2);
    CHECK(h[0].site_id == "b");
    CHECK(h[0].visits == std::vector<std::uint8_t>{0, 1});
  }
  SUBCASE("detection errors") {
    write_text(dir / "d3.csv", "site_id,visit,detected\na,1,2\n");
    CHECK_THROWS_AS(read_detections_csv(dir / "d3.csv"), DataError);
    write_text(dir / "d4.csv", "site_id,visit,detected\na,1,0\na,1,1\n");
    CHECK(message_contains([&] { read_detections_csv(dir / "d4.csv"); }, "duplicate visit"));
  }
  SUBCASE("coordinates") {
    write_text(dir / "xy.csv", "site_id,edge_id,dist_to_downstream_km,x,y\ns1,E2,1,0.5,2.5\n");
    const auto t = read_sites_csv(dir / "xy.csv");
    REQUIRE(t.coords.has_value());
    CHECK(t.coords->y[0] == 2.5);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_network_csv(dir / "nope.csv"), DataError); }
}

TEST_CASE("covariate selection and standardization") {
  const auto dir = fixtures::temp_dir("io_cov");
  const auto paths = write_y_dataset(dir);
  const auto all = read_covariates_csv(*paths.covariates);
  CHECK(all.names == std::vector<std::string>{"elev", "flow"});
  const auto one = read_covariates_csv(*paths.covariates, {"flow"});
  CHECK(one.names == std::vector<std::string>{"flow"});
  CHECK_THROWS_AS(read_covariates_csv(*paths.covariates, {"depth"}), DataError);

  Standardization tr;
  const auto x = build_design({"s3", "s1", "s2"}, &all, true, tr);
  CHECK(tr.applied);
  CHECK(tr.center[0] == doctest::Approx(30.0));
  CHECK(tr.scale[0] == doctest::Approx(std::sqrt(700.0)));
  CHECK(x.values(0, 1) == doctest::Approx(30.0 / std::sqrt(700.0)));
  CHECK(x.values.col(1).mean() == doctest::Approx(0.0).epsilon(1e-14));

  write_text(dir / "const.csv", "site_id,c\ns1,4\ns2,4\ns3,4\n");
  const auto constant = read_covariates_csv(dir / "const.csv");
  const auto xc = build_design({"s1", "s2", "s3"}, &constant, true, tr);
  CHECK(tr.scale[0] == 1.0);
  CHECK(xc.values.col(1).isZero(0.0));

  const auto raw = build_design({"s1", "s2", "s3"}, &all, false, tr);
  CHECK_FALSE(tr.applied);
  CHECK(raw.values(2, 1) == 60.0);

  // A stored transform is reused for new rows.
  Standardization stored;
  build_design({"s1", "s2", "s3"}, &all, true, stored);
  CovariateTable fresh{{"n1"}, {"elev", "flow"}, Eigen::RowVector2d(30.0, 0.4)};
  const auto xn = apply_design({"n1"}, &fresh, {"elev", "flow"}, stored);
  CHECK(xn.values(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("dataset cross-checks name the offending sites") {
  const auto dir = fixtures::temp_dir("io_mismatch");
  auto paths = write_y_dataset(dir);
  const auto ok = load_dataset(paths, {"elev"});
  CHECK(ok.histories.size() == 3);
  CHECK(ok.covariates->names == std::vector<std::string>{"elev"});

  write_detections_csv(dir / "bad_det.csv", {{"s1", {0}}, {"s2", {1}}, {"s9", {1}}});
  auto p1 = paths;
  p1.detections = dir / "bad_det.csv";
  CHECK(message_contains([&] { load_dataset(p1); }, "detections reference unknown sites: s9"));
  CHECK(message_contains([&] { load_dataset(p1); }, "sites without detections: s3"));

  write_text(dir / "bad_cov.csv", "site_id,elev\ns1,1\ns2,2\n");
  auto p2 = paths;
  p2.covariates = dir / "bad_cov.csv";
  CHECK(message_contains([&] { load_dataset(p2); }, "sites without covariates: s3"));

  write_text(dir / "bad_sites.csv", "site_id,edge_id,dist_to_downstream_km\ns1,E2,1\ns2,E3,1\ns3,E7,1\n");
  auto p3 = paths;
  p3.sites = dir / "bad_sites.csv";
  CHECK_THROWS_AS(load_dataset(p3), PlacementError);

  auto p4 = paths;
  p4.covariates.reset();
  CHECK_THROWS_AS(load_dataset(p4, {"elev"}), DataError);
}

TEST_CASE("draws round trip exactly") {
  const auto dir = fixtures::temp_dir("io_draws");
  Rng rng = make_stream(51);
  std::vector<DrawMatrix> chains(2);
  for (auto& c : chains) {
    c.columns = {"beta0", "p", "psi[a,b]"};
    c.values.resize(5, 3);
    for (int i = 0; i < 5; ++i) {
      c.iterations.push_back(100 + i);
      for (int j = 0; j < 3; ++j) c.values(i, j) = standard_normal(rng) * std::pow(10.0, j * 7 - 7);
    }
  }
  chains[1].values(2, 1) = 1.0 / 3.0;
  write_draws_csv(dir / "draws.csv", chains);
  const auto back = read_draws_csv(dir / "draws.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].columns == chains[0].columns);
  CHECK(back[1].iterations == chains[1].iterations);
  for (std::size_t c = 0; c < 2; ++c) CHECK(back[c].values == chains[c].values);
}

TEST_CASE("sha-256 of known inputs") {
  const auto dir = fixtures::temp_dir("io_sha");
  write_text(dir / "abc", "abc");
  CHECK(sha256_file(dir / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  write_text(dir / "empty", "");
  CHECK(sha256_file(dir / "empty") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK_THROWS_AS(sha256_file(dir / "missing"), DataError);
}

TEST_CASE("output directories") {
  const auto dir = fixtures::temp_dir("io_outdir");
  CHECK_NOTHROW(ensure_output_dir(dir / "a" / "b"));
  CHECK(fs::is_directory(dir / "a" / "b"));
  write_text(dir / "file", "x");
  CHECK_THROWS_AS(ensure_output_dir(dir / "file" / "sub"), IoError);
  CHECK(format_estimate(0.5, 0.123, 0.876) == "0.50 (0.12, 0.88)");
}

TEST_CASE("fit, summary and prediction agree") {
  const auto dir = fixtures::temp_dir("io_fit");
  auto paths = write_y_dataset(dir);
  // A long side tributary for a site far from every observed site.
  auto net = fixtures::y_network();
  net.edges.push_back({"E4", "F", "A", 5000.0, 1.0});
  write_network_csv(paths.network, net);
  const auto data = load_dataset(paths, {"elev"});
  FitOptions opts;
  opts.sampler.n_chains = 2;
  opts.sampler.n_iterations = 3000;
  opts.sampler.n_burnin = 1000;
  opts.sampler.seed = 52;
  const auto fit = fit_dataset(data, opts);
  write_fit_outputs(fit, dir / "fit");
  CHECK(fs::exists(dir / "fit" / "draws.csv"));

  std::ifstream in(dir / "fit" / "summary.json");
  const auto summary = nlohmann::json::parse(in);
  CHECK(summary.at("schema") == "ssnocc-summary-v1");
  CHECK(summary.at("model") == "taildown");
  CHECK(summary.at("covariates").at("names") == std::vector<std::string>{"elev"});
  CHECK(summary.at("priors").at("theta").at("max_stream_distance_km").get<double>() == doctest::Approx(7.0));

  write_text(dir / "new_sites.csv",
             "site_id,edge_id,dist_to_downstream_km\ntwin,E2,2.0\nfar,E4,4999.0\n");
  write_text(dir / "new_cov.csv", "site_id,elev\ntwin,10\nfar,30\n");
  PredictOptions po;
  po.fit_dir = dir / "fit";
  po.new_sites = dir / "new_sites.csv";
  po.new_covariates = dir / "new_cov.csv";
  po.seed = 53;
  const auto preds = predict(po);
  REQUIRE(preds.size() == 5);

  const auto& params = summary.at("parameters");
  auto summary_mean = [&](const std::string& name) {
    for (const auto& p : params)
      if (p.at("name") == name) return p.at("mean").get<double>();
    FAIL("missing " << name);
    return 0.0;
  };
  for (int i = 0; i < 3; ++i) {
    CHECK(preds[static_cast<std::size_t>(i)].observed);
    CHECK(std::abs(preds[static_cast<std::size_t>(i)].mean -
                   summary_mean("psi[" + preds[static_cast<std::size_t>(i)].site_id + "]")) < 1e-12);
  }

  // Coincident with s1 and sharing its covariate: same posterior mean.
  CHECK_FALSE(preds[3].observed);
  CHECK(preds[3].mean == doctest::Approx(preds[0].mean).epsilon(1e-3));

  // Far away the field is independent of the data: psi = logit^-1(beta0 + sigma w).
  const auto chains = read_draws_csv(dir / "fit" / "draws.csv");
  double expect = 0.0;
  std::size_t n = 0;
  const int nodes = 200;
  for (const auto& c : chains) {
    const auto b0 = c.column("beta0");
    const auto sg = c.column("sigma");
    for (std::size_t i = 0; i < b0.size(); ++i, ++n) {
      double acc = 0.0;
      double wsum = 0.0;
      for (int k = 0; k < nodes; ++k) {
        const double w = -8.0 + 16.0 * (k + 0.5) / nodes;
        const double wt = std::exp(-0.5 * w * w);
        acc += wt * inv_logit(b0[i] + sg[i] * w);
        wsum += wt;
      }
      expect += acc / wsum;
    }
  }
  expect /= static_cast<double>(n);
  CHECK(std::abs(preds[4].mean - expect) < 0.02);

  SUBCASE("thinning") {
    PredictOptions t = po;
    t.new_sites.reset();
    t.thin = 5000;
    CHECK_THROWS_AS(predict(t), ParameterError);
    t.thin = 3;
    const auto thinned = predict(t);
    CHECK(thinned.size() == 3);
  }
  SUBCASE("new site off the network") {
    write_text(dir / "off.csv", "site_id,edge_id,dist_to_downstream_km\nx,E2,9.0\n");
    PredictOptions t = po;
    t.new_sites = dir / "off.csv";
    CHECK_THROWS_AS(predict(t), PlacementError);
  }
  SUBCASE("diagnostics files") {
    const auto d = diagnose_draws(chains);
    CHECK(d.table.size() == 5);
    write_diagnostics(dir / "diag", chains, d);
    for (const char* f : {"diagnostics.csv", "traces.csv", "densities.csv"}) CHECK(fs::exists(dir / "diag" / f));
    const auto table = read_csv(dir / "diag" / "diagnostics.csv");
    CHECK(table.header == std::vector<std::string>{"parameter", "rhat", "ess", "mean", "sd", "q2.5", "q97.5"});
  }
}

TEST_CASE("nonspatial fit skips distances") {
  const auto dir = fixtures::temp_dir("io_flat");
  auto paths = write_y_dataset(dir);
  paths.covariates.reset();
  const auto data = load_dataset(paths);
  FitOptions opts;
  opts.structure = SpatialStructure::NonSpatial;
  opts.sampler.n_iterations = 1000;
  opts.sampler.n_burnin = 500;
  const auto fit = fit_dataset(data, opts);
  CHECK(fit.max_distance == 0.0);
  CHECK(fit.covariate_names.empty());
  CHECK_FALSE(fit.run.chains.front().draws.has_column("sigma"));
  const auto j = summary_json(fit);
  CHECK(j.at("model") == "nonspatial");
}
