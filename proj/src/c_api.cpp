#include "ssnocc/ssnocc.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "ssnocc/error.hpp"
#include "ssnocc/io.hpp"

struct ssnocc_dataset {
  ssnocc::Dataset data;
};

struct ssnocc_fit {
  ssnocc::FitResult result;
};

namespace {

thread_local std::string g_last_error;

ssnocc_status fail(ssnocc_status status, const char* message) {
  g_last_error = message;
  return status;
}

// Runs f, mapping exceptions onto status codes.
template <class F>
ssnocc_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return SSNOCC_OK;
  } catch (const ssnocc::Error& e) {
    switch (e.kind()) {
      case ssnocc::ErrorKind::Parameter: return fail(SSNOCC_ERR_USAGE, e.what());
      case ssnocc::ErrorKind::Placement:
      case ssnocc::ErrorKind::Data: return fail(SSNOCC_ERR_DATA, e.what());
      case ssnocc::ErrorKind::Io: return fail(SSNOCC_ERR_OUTPUT, e.what());
      case ssnocc::ErrorKind::Numeric: return fail(SSNOCC_ERR_NUMERIC, e.what());
    }
    return fail(SSNOCC_ERR_INTERNAL, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(SSNOCC_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SSNOCC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SSNOCC_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ssnocc::SimulationDesign to_design(const ssnocc_design& d) {
  if (d.n_beta < 1 || d.n_beta > SSNOCC_MAX_BETA)
    throw ssnocc::ParameterError("n_beta must lie in [1, " + std::to_string(SSNOCC_MAX_BETA) + "]");
  ssnocc::SimulationDesign out;
  out.n_sites = d.n_sites;
  out.n_visits = d.n_visits;
  out.n_replicates = d.n_replicates;
  out.true_beta.assign(d.true_beta, d.true_beta + d.n_beta);
  out.true_p = d.true_p;
  out.true_sigma2 = d.true_sigma2;
  out.true_theta = d.true_theta;
  out.mean_edge_length = d.mean_edge_length;
  out.network_seed = d.network_seed;
  out.data_seed = d.data_seed;
  out.validate();
  return out;
}

ssnocc::SamplerConfig to_config(const ssnocc_sampler_config& c) {
  ssnocc::SamplerConfig out;
  out.n_chains = c.n_chains;
  out.n_iterations = c.n_iterations;
  out.n_burnin = c.n_burnin;
  out.thin = c.thin;
  out.seed = c.seed;
  out.adapt_window = c.adapt_window;
  out.target_accept = c.target_accept;
  out.workers = c.workers;
  if (c.has_fixed_sigma) out.fixed_sigma = c.fixed_sigma;
  if (c.has_fixed_theta) out.fixed_theta = c.fixed_theta;
  out.validate();
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw ssnocc::ParameterError(std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* ssnocc_version(void) { return ssnocc::kVersion; }

const char* ssnocc_last_error(void) { return g_last_error.c_str(); }

void ssnocc_string_free(char* s) { std::free(s); }

void ssnocc_design_default(ssnocc_design* design) {
  if (!design) return;
  const ssnocc::SimulationDesign d;
  std::memset(design, 0, sizeof *design);
  design->n_sites = d.n_sites;
  design->n_visits = d.n_visits;
  design->n_replicates = d.n_replicates;
  design->n_beta = static_cast<int>(d.true_beta.size());
  for (std::size_t k = 0; k < d.true_beta.size(); ++k) design->true_beta[k] = d.true_beta[k];
  design->true_p = d.true_p;
  design->true_sigma2 = d.true_sigma2;
  design->true_theta = d.true_theta;
  design->mean_edge_length = d.mean_edge_length;
  design->network_seed = d.network_seed;
  design->data_seed = d.data_seed;
}

void ssnocc_sampler_default(ssnocc_sampler_config* config) {
  if (!config) return;
  const ssnocc::SamplerConfig c;
  std::memset(config, 0, sizeof *config);
  config->n_chains = c.n_chains;
  config->n_iterations = c.n_iterations;
  config->n_burnin = c.n_burnin;
  config->thin = c.thin;
  config->seed = c.seed;
  config->adapt_window = c.adapt_window;
  config->target_accept = c.target_accept;
  config->workers = c.workers;
}

ssnocc_status ssnocc_design_validate(const ssnocc_design* design) {
  return guarded([&] {
    require(design, "design");
    to_design(*design);
  });
}

ssnocc_status ssnocc_sampler_validate(const ssnocc_sampler_config* config) {
  return guarded([&] {
    require(config, "config");
    to_config(*config);
  });
}

ssnocc_status ssnocc_design_json(const ssnocc_design* design, char** out) {
  return guarded([&] {
    require(design, "design");
    require(out, "out");
    *out = dup_string(ssnocc::design_json(to_design(*design)).dump());
  });
}

ssnocc_status ssnocc_sampler_json(const ssnocc_sampler_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = dup_string(ssnocc::sampler_json(to_config(*config)).dump());
  });
}

ssnocc_status ssnocc_simulate_replicate(const ssnocc_design* design, int replicate,
                                        const char* dir) {
  return guarded([&] {
    require(design, "design");
    require(dir, "dir");
    if (replicate < 1) throw ssnocc::ParameterError("replicate must be at least 1");
    const auto d = to_design(*design);
    const auto r = ssnocc::simulate_replicate(d, replicate);
    const ssnocc::fs::path out(dir);
    ssnocc::ensure_output_dir(out);
    ssnocc::write_network_csv(out / "network.csv", r.generated.network);
    ssnocc::write_sites_csv(out / "sites.csv", r.generated.sites);
    ssnocc::write_detections_csv(out / "detections.csv", r.data.histories);
    ssnocc::write_truth_csv(out / "truth.csv", r.data.truth);
  });
}

ssnocc_status ssnocc_dataset_load(const char* network, const char* sites, const char* detections,
                                  const char* covariates, const char* const* columns,
                                  size_t n_columns, ssnocc_dataset** out) {
  return guarded([&] {
    require(network, "network");
    require(sites, "sites");
    require(detections, "detections");
    require(out, "out");
    *out = nullptr;
    ssnocc::DatasetPaths paths{network, sites, detections, std::nullopt};
    if (covariates) paths.covariates = ssnocc::fs::path(covariates);
    std::vector<std::string> cols;
    for (size_t i = 0; i < n_columns; ++i) {
      require(columns[i], "column name");
      cols.emplace_back(columns[i]);
    }
    auto* d = new ssnocc_dataset{ssnocc::load_dataset(paths, cols)};
    *out = d;
  });
}

size_t ssnocc_dataset_n_sites(const ssnocc_dataset* data) {
  return data ? data->data.sites.sites.size() : 0;
}

ssnocc_status ssnocc_dataset_max_distance(const ssnocc_dataset* data, double* out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    *out = ssnocc::distance_tables(data->data.network, data->data.sites.sites).max_distance();
  });
}

void ssnocc_dataset_free(ssnocc_dataset* data) { delete data; }

ssnocc_status ssnocc_fit_run(const ssnocc_dataset* data, ssnocc_model model,
                             const ssnocc_sampler_config* config, int standardize,
                             ssnocc_fit** out) {
  return guarded([&] {
    require(data, "data");
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    ssnocc::FitOptions opts;
    switch (model) {
      case SSNOCC_MODEL_TAILDOWN: opts.structure = ssnocc::SpatialStructure::TailDown; break;
      case SSNOCC_MODEL_NONSPATIAL: opts.structure = ssnocc::SpatialStructure::NonSpatial; break;
      default: throw ssnocc::ParameterError("unknown model");
    }
    opts.sampler = to_config(*config);
    opts.standardize = standardize != 0;
    auto* f = new ssnocc_fit{ssnocc::fit_dataset(data->data, opts)};
    *out = f;
  });
}

ssnocc_status ssnocc_fit_write(const ssnocc_fit* fit, const char* dir) {
  return guarded([&] {
    require(fit, "fit");
    require(dir, "dir");
    ssnocc::write_fit_outputs(fit->result, dir);
  });
}

ssnocc_status ssnocc_fit_summary_json(const ssnocc_fit* fit, char** out) {
  return guarded([&] {
    require(fit, "fit");
    require(out, "out");
    *out = dup_string(ssnocc::summary_json(fit->result).dump());
  });
}

int ssnocc_fit_converged(const ssnocc_fit* fit) {
  return fit && fit->result.run.summary.converged() ? 1 : 0;
}

void ssnocc_fit_free(ssnocc_fit* fit) { delete fit; }

ssnocc_status ssnocc_predict(const char* fit_dir, const char* network, const char* sites,
                             const char* new_sites, const char* new_covariates, int thin,
                             uint64_t seed, const char* out_csv, size_t* n_rows) {
  return guarded([&] {
    require(fit_dir, "fit_dir");
    require(out_csv, "out_csv");
    ssnocc::PredictOptions opts;
    opts.fit_dir = fit_dir;
    if (network) opts.network = ssnocc::fs::path(network);
    if (sites) opts.sites = ssnocc::fs::path(sites);
    if (new_sites) opts.new_sites = ssnocc::fs::path(new_sites);
    if (new_covariates) opts.new_covariates = ssnocc::fs::path(new_covariates);
    opts.thin = thin;
    opts.seed = seed;
    const auto preds = ssnocc::predict(opts);
    const ssnocc::fs::path out(out_csv);
    if (out.has_parent_path()) ssnocc::ensure_output_dir(out.parent_path());
    ssnocc::write_predictions_csv(out, preds);
    if (n_rows) *n_rows = preds.size();
  });
}

ssnocc_status ssnocc_diagnose(const char* fit_dir, const char* out_dir, int* pass,
                              char** table_json) {
  return guarded([&] {
    require(fit_dir, "fit_dir");
    require(out_dir, "out_dir");
    require(pass, "pass");
    const ssnocc::fs::path draws = ssnocc::fs::path(fit_dir) / "draws.csv";
    if (!ssnocc::fs::exists(draws))
      throw ssnocc::DataError("missing draws file '" + draws.string() + "'");
    const auto chains = ssnocc::read_draws_csv(draws);
    const auto result = ssnocc::diagnose_draws(chains);
    ssnocc::write_diagnostics(out_dir, chains, result);
    *pass = result.pass ? 1 : 0;
    if (table_json) {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& p : result.table) {
        rows.push_back({{"parameter", p.name},
                        {"rhat", p.rhat.value},
                        {"ess", p.ess.value},
                        {"mean", p.mean},
                        {"sd", p.sd},
                        {"q2.5", p.q025},
                        {"q97.5", p.q975}});
      }
      *table_json = dup_string(rows.dump());
    }
  });
}

ssnocc_status ssnocc_study_run(const ssnocc_design* design, const ssnocc_sampler_config* config,
                               int fit_nonspatial, int workers, const char* out_dir,
                               char** report_json) {
  return guarded([&] {
    require(design, "design");
    require(config, "config");
    require(out_dir, "out_dir");
    if (workers < 1) throw ssnocc::ParameterError("workers must be at least 1");
    const auto d = to_design(*design);
    const auto c = to_config(*config);
    ssnocc::ensure_output_dir(out_dir);
    ssnocc::StudyOptions opts;
    opts.fit_nonspatial = fit_nonspatial != 0;
    opts.workers = workers;
    const auto report = ssnocc::run_study(d, c, opts);
    ssnocc::write_study_outputs(out_dir, report);
    if (report_json) *report_json = dup_string(ssnocc::study_json(report).dump());
  });
}

ssnocc_status ssnocc_sha256_file(const char* path, char** hex) {
  return guarded([&] {
    require(path, "path");
    require(hex, "hex");
    *hex = dup_string(ssnocc::sha256_file(path));
  });
}

}  // extern "C"
