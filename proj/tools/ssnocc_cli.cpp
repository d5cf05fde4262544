// ssnocc: simulate, fit, predict, diagnose and study subcommands over the C API.
//
// Exit codes: 0 success, 1 diagnostic failure, 2 usage error, 3 data error.

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssnocc/ssnocc.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDiagnostic = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct Failure {
  int code;
  std::string message;
};

int exit_code(ssnocc_status s) {
  switch (s) {
    case SSNOCC_OK: return kExitOk;
    case SSNOCC_ERR_USAGE:
    case SSNOCC_ERR_OUTPUT: return kExitUsage;
    default: return kExitData;
  }
}

void check(ssnocc_status s) {
  if (s != SSNOCC_OK) throw Failure{exit_code(s), ssnocc_last_error()};
}

// Owns a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  ssnocc_string_free(s);
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string digest(const fs::path& p) {
  char* hex = nullptr;
  check(ssnocc_sha256_file(p.string().c_str(), &hex));
  return take(hex);
}

int default_workers(int cap) {
  const unsigned hw = std::thread::hardware_concurrency();
  const int n = hw == 0 ? 1 : static_cast<int>(hw);
  return std::max(1, std::min(n, cap));
}

struct Manifest {
  json doc;

  Manifest(const std::string& command, const std::vector<std::string>& argv) {
    doc = {{"schema", "ssnocc-manifest-v1"},
           {"command", command},
           {"argv", argv},
           {"version", ssnocc_version()},
           {"started_at", utc_now()},
           {"inputs", json::object()},
           {"outputs", json::object()}};
  }

  void input(const std::string& role, const fs::path& p) {
    doc["inputs"][role] = {{"path", fs::absolute(p).string()}, {"sha256", digest(p)}};
  }

  void output(const fs::path& dir, const std::string& name) {
    doc["outputs"][name] = digest(dir / name);
  }

  void write(const fs::path& dir) {
    doc["finished_at"] = utc_now();
    const fs::path path = dir / "manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << '\n';
    out.flush();
    if (!out) throw Failure{kExitUsage, "cannot write '" + path.string() + "'"};
  }
};

// SSNOCC_SEED takes precedence over --seed.
std::uint64_t resolve_seed(std::uint64_t flag_seed, json& seeds) {
  const char* env = std::getenv("SSNOCC_SEED");
  if (!env || !*env) {
    seeds["source"] = "flag";
    return flag_seed;
  }
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || end == env || *end != '\0' || env[0] == '-')
    throw Failure{kExitUsage, std::string("SSNOCC_SEED: invalid seed '") + env + "'"};
  seeds["source"] = "SSNOCC_SEED";
  return v;
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Failure{kExitUsage, "--out: cannot create output directory '" + dir.string() + "'"};
  const fs::path probe = dir / ".ssnocc_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw Failure{kExitUsage, "--out: output directory '" + dir.string() + "' is not writable"};
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  int sites = 100;
  int visits = 5;
  int replicates = 100;
  std::vector<double> beta{0.5, 1.0};
  double p = 0.6;
  double sigma2 = 2.0;
  double theta = 10.0;
  double mean_edge_length = 5.0;
  std::uint64_t seed = 1;
  std::string out;
};

void add_design_flags(CLI::App* cmd, SimulateArgs& a, bool with_seed = true) {
  cmd->add_option("--sites", a.sites, "Sites per replicate")->check(CLI::Range(2, 100000));
  cmd->add_option("--visits", a.visits, "Visits per site")->check(CLI::PositiveNumber);
  cmd->add_option("--replicates", a.replicates, "Number of replicates")->check(CLI::PositiveNumber);
  cmd->add_option("--beta", a.beta, "Occupancy coefficients, intercept first")->expected(1, SSNOCC_MAX_BETA);
  cmd->add_option("--p", a.p, "Detection probability")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--sigma2", a.sigma2, "Partial sill")->check(CLI::NonNegativeNumber);
  cmd->add_option("--theta", a.theta, "Range (km)")->check(CLI::PositiveNumber);
  cmd->add_option("--mean-edge-length", a.mean_edge_length, "Mean edge length (km)")
      ->check(CLI::PositiveNumber);
  if (with_seed) cmd->add_option("--seed", a.seed, "Base seed");
}

ssnocc_design make_design(const SimulateArgs& a, std::uint64_t seed) {
  ssnocc_design d;
  ssnocc_design_default(&d);
  d.n_sites = a.sites;
  d.n_visits = a.visits;
  d.n_replicates = a.replicates;
  d.n_beta = static_cast<int>(a.beta.size());
  for (std::size_t k = 0; k < a.beta.size(); ++k) d.true_beta[k] = a.beta[k];
  d.true_p = a.p;
  d.true_sigma2 = a.sigma2;
  d.true_theta = a.theta;
  d.mean_edge_length = a.mean_edge_length;
  d.network_seed = seed;
  d.data_seed = seed + 1;
  check(ssnocc_design_validate(&d));
  return d;
}

int run_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  json seeds;
  const std::uint64_t seed = resolve_seed(a.seed, seeds);
  const ssnocc_design d = make_design(a, seed);
  seeds["seed"] = seed;
  seeds["network_seed"] = d.network_seed;
  seeds["data_seed"] = d.data_seed;
  char* dj = nullptr;
  check(ssnocc_design_json(&d, &dj));
  const json design = json::parse(take(dj));

  const fs::path out(a.out);
  prepare_out(out);
  Manifest top("simulate", argv);
  top.doc["config"] = {{"design", design}};
  top.doc["seeds"] = seeds;
  json reps = json::array();
  for (int r = 1; r <= a.replicates; ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "rep_%03d", r);
    const fs::path dir = out / name;
    Manifest m("simulate", argv);
    check(ssnocc_simulate_replicate(&d, r, dir.string().c_str()));
    m.doc["config"] = {{"design", design}, {"replicate", r}};
    m.doc["seeds"] = seeds;
    for (const char* f : {"network.csv", "sites.csv", "detections.csv", "truth.csv"}) m.output(dir, f);
    m.write(dir);
    reps.push_back(name);
  }
  top.doc["replicates"] = reps;
  top.write(out);
  std::cout << "wrote " << a.replicates << " replicate(s) to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- fit

struct SamplerArgs {
  int chains = 2;
  int iters = 15000;
  int burnin = 5000;
  int thin = 1;
  std::uint64_t seed = 1;
  int workers = 0;
  std::optional<double> fixed_sigma;
  std::optional<double> fixed_theta;
};

void add_sampler_flags(CLI::App* cmd, SamplerArgs& a) {
  cmd->add_option("--chains", a.chains, "Number of chains")->check(CLI::PositiveNumber);
  cmd->add_option("--iters", a.iters, "Iterations per chain, burn-in included")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--burnin", a.burnin, "Burn-in iterations per chain")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--thin", a.thin, "Keep every n-th post-burn-in draw")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Base seed");
  cmd->add_option("--workers", a.workers, "Worker threads (default: cores, capped)")
      ->check(CLI::PositiveNumber);
}

ssnocc_sampler_config make_config(const SamplerArgs& a, std::uint64_t seed, int workers) {
  ssnocc_sampler_config c;
  ssnocc_sampler_default(&c);
  c.n_chains = a.chains;
  c.n_iterations = a.iters;
  c.n_burnin = a.burnin;
  c.thin = a.thin;
  c.seed = seed;
  c.workers = workers;
  if (a.fixed_sigma) {
    c.has_fixed_sigma = 1;
    c.fixed_sigma = *a.fixed_sigma;
  }
  if (a.fixed_theta) {
    c.has_fixed_theta = 1;
    c.fixed_theta = *a.fixed_theta;
  }
  if (a.burnin >= a.iters) throw Failure{kExitUsage, "--burnin must be smaller than --iters"};
  check(ssnocc_sampler_validate(&c));
  return c;
}

struct FitArgs {
  std::string network, sites, detections;
  std::optional<std::string> covariates;
  std::vector<std::string> covariate_columns;
  std::string model = "taildown";
  bool no_standardize = false;
  SamplerArgs sampler;
  std::string out;
};

void print_summary(const json& s) {
  std::printf("%-12s %-26s %8s %8s\n", "parameter", "mean (2.5%, 97.5%)", "rhat", "ess");
  for (const auto& p : s.at("parameters")) {
    if (!p.at("monitored").get<bool>() && p.at("name") != "sigma2" &&
        p.at("name") != "theta_over_sigma2")
      continue;
    const auto num = [](const json& v) { return v.is_number() ? v.get<double>() : NAN; };
    std::printf("%-12s %-26s %8.3f %8.0f\n", p.at("name").get<std::string>().c_str(),
                p.at("estimate").get<std::string>().c_str(), num(p.at("rhat")), num(p.at("ess")));
  }
  std::printf("converged: %s\n", s.at("converged").get<bool>() ? "yes" : "no");
  for (const auto& w : s.at("warnings")) std::printf("warning: %s\n", w.get<std::string>().c_str());
}

int run_fit(const FitArgs& a, const std::vector<std::string>& argv) {
  json seeds;
  const std::uint64_t seed = resolve_seed(a.sampler.seed, seeds);
  seeds["seed"] = seed;
  seeds["chain_seeds"] = "seed XOR chain index";
  const int workers = a.sampler.workers > 0 ? a.sampler.workers : default_workers(a.sampler.chains);
  const ssnocc_sampler_config cfg = make_config(a.sampler, seed, workers);
  const ssnocc_model model = a.model == "nonspatial" ? SSNOCC_MODEL_NONSPATIAL : SSNOCC_MODEL_TAILDOWN;

  const fs::path out(a.out);
  prepare_out(out);
  Manifest m("fit", argv);

  std::vector<const char*> cols;
  for (const auto& c : a.covariate_columns) cols.push_back(c.c_str());
  ssnocc_dataset* data = nullptr;
  check(ssnocc_dataset_load(a.network.c_str(), a.sites.c_str(), a.detections.c_str(),
                            a.covariates ? a.covariates->c_str() : nullptr, cols.data(),
                            cols.size(), &data));
  std::unique_ptr<ssnocc_dataset, void (*)(ssnocc_dataset*)> data_guard(data, ssnocc_dataset_free);
  m.input("network", a.network);
  m.input("sites", a.sites);
  m.input("detections", a.detections);
  if (a.covariates) m.input("covariates", *a.covariates);

  ssnocc_fit* fit = nullptr;
  check(ssnocc_fit_run(data, model, &cfg, a.no_standardize ? 0 : 1, &fit));
  std::unique_ptr<ssnocc_fit, void (*)(ssnocc_fit*)> fit_guard(fit, ssnocc_fit_free);
  check(ssnocc_fit_write(fit, out.string().c_str()));
  char* sj = nullptr;
  check(ssnocc_fit_summary_json(fit, &sj));
  const json summary = json::parse(take(sj));

  char* cj = nullptr;
  check(ssnocc_sampler_json(&cfg, &cj));
  m.doc["config"] = {{"model", a.model},
                     {"sampler", json::parse(take(cj))},
                     {"covariate_columns", a.covariate_columns},
                     {"standardization", summary.at("covariates")}};
  m.doc["seeds"] = seeds;
  m.doc["priors"] = summary.at("priors");
  m.output(out, "draws.csv");
  m.output(out, "summary.json");
  m.write(out);
  print_summary(summary);
  return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string fit_dir;
  std::optional<std::string> network, sites, new_sites, new_covariates;
  int thin = 1;
  std::uint64_t seed = 1;
  std::string out;
};

int run_predict(const PredictArgs& a, const std::vector<std::string>& argv) {
  json seeds;
  const std::uint64_t seed = resolve_seed(a.seed, seeds);
  seeds["seed"] = seed;
  const fs::path out(a.out);
  prepare_out(out);
  Manifest m("predict", argv);
  const fs::path fit_dir(a.fit_dir);
  const auto opt = [](const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; };
  std::size_t rows = 0;
  check(ssnocc_predict(a.fit_dir.c_str(), opt(a.network), opt(a.sites), opt(a.new_sites),
                       opt(a.new_covariates), a.thin, seed, (out / "predictions.csv").string().c_str(),
                       &rows));
  m.input("draws", fit_dir / "draws.csv");
  m.input("summary", fit_dir / "summary.json");
  if (a.network) m.input("network", *a.network);
  if (a.sites) m.input("sites", *a.sites);
  if (a.new_sites) m.input("new_sites", *a.new_sites);
  if (a.new_covariates) m.input("new_covariates", *a.new_covariates);
  m.doc["config"] = {{"thin", a.thin}};
  m.doc["seeds"] = seeds;
  std::ifstream sin(fit_dir / "summary.json");
  const json summary = json::parse(sin, nullptr, false);
  if (!summary.is_discarded() && summary.contains("priors")) m.doc["priors"] = summary["priors"];
  m.output(out, "predictions.csv");
  m.write(out);
  std::cout << "wrote " << rows << " site prediction(s) to " << (out / "predictions.csv").string()
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::string fit_dir;
  std::string out;
};

int run_diagnose(const DiagnoseArgs& a, const std::vector<std::string>& argv) {
  const fs::path fit_dir(a.fit_dir);
  const fs::path draws = fit_dir / "draws.csv";
  if (!fs::exists(draws)) throw Failure{kExitData, "missing draws file '" + draws.string() + "'"};
  const fs::path out = a.out.empty() ? fit_dir / "diagnostics" : fs::path(a.out);
  prepare_out(out);
  Manifest m("diagnose", argv);
  int pass = 0;
  char* tj = nullptr;
  check(ssnocc_diagnose(a.fit_dir.c_str(), out.string().c_str(), &pass, &tj));
  const json table = json::parse(take(tj));
  m.input("draws", draws);
  m.doc["config"] = {{"rhat_max", 1.1}, {"ess_min", 100}};
  m.doc["seeds"] = json::object();
  for (const char* f : {"diagnostics.csv", "traces.csv", "densities.csv"}) m.output(out, f);
  m.doc["pass"] = pass == 1;
  m.write(out);
  std::printf("%-18s %10s %10s\n", "parameter", "rhat", "ess");
  for (const auto& row : table) {
    const auto num = [](const json& v) { return v.is_number() ? v.get<double>() : NAN; };
    std::printf("%-18s %10.4f %10.1f\n", row.at("parameter").get<std::string>().c_str(),
                num(row.at("rhat")), num(row.at("ess")));
  }
  std::printf("%s\n", pass ? "PASS: R-hat < 1.1 and ESS > 100" : "FAIL: R-hat >= 1.1 or ESS <= 100");
  return pass ? kExitOk : kExitDiagnostic;
}

// ---------------------------------------------------------------- study

struct StudyArgs {
  SimulateArgs design;
  SamplerArgs sampler;
  bool no_nonspatial = false;
};

int run_study(const StudyArgs& a, const std::vector<std::string>& argv) {
  json seeds;
  const std::uint64_t seed = resolve_seed(a.sampler.seed, seeds);
  const ssnocc_design d = make_design(a.design, seed);
  const int workers =
      a.sampler.workers > 0 ? a.sampler.workers : default_workers(a.design.replicates);
  ssnocc_sampler_config cfg = make_config(a.sampler, seed, 1);
  seeds["seed"] = seed;
  seeds["network_seed"] = d.network_seed;
  seeds["data_seed"] = d.data_seed;
  seeds["sampler_seed"] = "splitmix64 mix of seed and replicate";

  const fs::path out(a.design.out);
  prepare_out(out);
  Manifest m("study", argv);
  char* rj = nullptr;
  check(ssnocc_study_run(&d, &cfg, a.no_nonspatial ? 0 : 1, workers, out.string().c_str(), &rj));
  const json report = json::parse(take(rj));
  char* dj = nullptr;
  check(ssnocc_design_json(&d, &dj));
  char* cj = nullptr;
  check(ssnocc_sampler_json(&cfg, &cj));
  m.doc["config"] = {{"design", json::parse(take(dj))},
                     {"sampler", json::parse(take(cj))},
                     {"workers", workers}};
  m.doc["seeds"] = seeds;
  m.output(out, "study.csv");
  m.output(out, "study.json");
  m.write(out);

  const auto& agg = report.at("aggregates");
  for (const char* model : {"spatial", "nonspatial"}) {
    if (std::string(model) == "nonspatial" && a.no_nonspatial) continue;
    for (const char* subset : {"all", "converged_only"}) {
      const auto& g = agg.at(model).at(subset);
      std::printf("%-10s %-15s n=%d", model, subset, g.at("n_replicates").get<int>());
      for (const auto& [name, b] : g.at("relative_bias").items()) {
        const auto& v = b.at("value");
        std::printf("  %s=%s", name.c_str(), v.is_number() ? std::to_string(v.get<double>()).c_str() : "nan");
      }
      const auto& r = g.at("rmspe");
      std::printf("  rmspe=%s\n", r.is_number() ? std::to_string(r.get<double>()).c_str() : "nan");
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian occupancy models with tail-down spatial effects on stream networks"};
  app.set_version_flag("--version", ssnocc_version());
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate replicate data sets");
  add_design_flags(c_sim, sim);
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit an occupancy model");
  c_fit->add_option("--network", fit.network, "Network CSV")->required();
  c_fit->add_option("--sites", fit.sites, "Sites CSV")->required();
  c_fit->add_option("--detections", fit.detections, "Detections CSV")->required();
  c_fit->add_option("--covariates", fit.covariates, "Covariates CSV");
  c_fit->add_option("--covariate-columns", fit.covariate_columns, "Covariate columns to use")
      ->delimiter(',');
  c_fit->add_option("--model", fit.model, "taildown or nonspatial")
      ->check(CLI::IsMember({"taildown", "nonspatial"}));
  c_fit->add_flag("--no-standardize", fit.no_standardize, "Use covariates as given");
  add_sampler_flags(c_fit, fit.sampler);
  c_fit->add_option("--fixed-sigma", fit.sampler.fixed_sigma, "Hold sigma fixed")
      ->check(CLI::NonNegativeNumber);
  c_fit->add_option("--fixed-theta", fit.sampler.fixed_theta, "Hold theta fixed")
      ->check(CLI::PositiveNumber);
  c_fit->add_option("--out", fit.out, "Output directory")->required();

  PredictArgs pred;
  auto* c_pred = app.add_subcommand("predict", "Posterior occupancy probability per site");
  c_pred->add_option("--fit", pred.fit_dir, "Fit directory")->required();
  c_pred->add_option("--network", pred.network, "Network CSV (default: the fit's)");
  c_pred->add_option("--sites", pred.sites, "Sites CSV (default: the fit's)");
  c_pred->add_option("--new-sites", pred.new_sites, "Sites CSV of unsampled sites");
  c_pred->add_option("--new-covariates", pred.new_covariates, "Covariates CSV for new sites");
  c_pred->add_option("--thin", pred.thin, "Use every n-th draw")->check(CLI::PositiveNumber);
  c_pred->add_option("--seed", pred.seed, "Seed for new-site draws");
  c_pred->add_option("--out", pred.out, "Output directory")->required();

  DiagnoseArgs diag;
  auto* c_diag = app.add_subcommand("diagnose", "R-hat/ESS table and trace/density series");
  c_diag->add_option("--fit", diag.fit_dir, "Fit directory")->required();
  c_diag->add_option("--out", diag.out, "Output directory (default: FIT/diagnostics)");

  StudyArgs study;
  study.design.replicates = 30;
  study.sampler.iters = 6000;
  study.sampler.burnin = 2000;
  auto* c_study = app.add_subcommand("study", "Simulation study: spatial vs nonspatial fits");
  add_design_flags(c_study, study.design, false);
  add_sampler_flags(c_study, study.sampler);
  c_study->add_flag("--no-nonspatial", study.no_nonspatial, "Fit the spatial model only");
  c_study->add_option("--out", study.design.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_sim) return run_simulate(sim, args);
    if (*c_fit) return run_fit(fit, args);
    if (*c_pred) return run_predict(pred, args);
    if (*c_diag) return run_diagnose(diag, args);
    if (*c_study) return run_study(study, args);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
