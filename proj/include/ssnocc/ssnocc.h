/* C interface to the ssnocc library: stream-network occupancy models. */
#ifndef SSNOCC_H
#define SSNOCC_H

#include <stddef.h>
#include <stdint.h>

#if defined(SSNOCC_BUILDING_LIBRARY)
#define SSNOCC_API __attribute__((visibility("default")))
#else
#define SSNOCC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SSNOCC_OK = 0,
  SSNOCC_ERR_USAGE = 1,   /* invalid argument or configuration */
  SSNOCC_ERR_DATA = 2,    /* unreadable or inconsistent input data */
  SSNOCC_ERR_OUTPUT = 3,  /* output could not be written */
  SSNOCC_ERR_NUMERIC = 4, /* factorization or sampler failure */
  SSNOCC_ERR_INTERNAL = 5
} ssnocc_status;

typedef enum { SSNOCC_MODEL_TAILDOWN = 0, SSNOCC_MODEL_NONSPATIAL = 1 } ssnocc_model;

#define SSNOCC_MAX_BETA 16

typedef struct {
  int n_sites;
  int n_visits;
  int n_replicates;
  int n_beta; /* intercept plus one slope per covariate */
  double true_beta[SSNOCC_MAX_BETA];
  double true_p;
  double true_sigma2;
  double true_theta;
  double mean_edge_length;
  uint64_t network_seed;
  uint64_t data_seed;
} ssnocc_design;

typedef struct {
  int n_chains;
  int n_iterations;
  int n_burnin;
  int thin;
  uint64_t seed;
  int adapt_window;
  double target_accept;
  int workers;
  int has_fixed_sigma;
  double fixed_sigma;
  int has_fixed_theta;
  double fixed_theta;
} ssnocc_sampler_config;

typedef struct ssnocc_dataset ssnocc_dataset;
typedef struct ssnocc_fit ssnocc_fit;

SSNOCC_API const char* ssnocc_version(void);
/* Message of the last failed call on this thread ("" if none). */
SSNOCC_API const char* ssnocc_last_error(void);
SSNOCC_API void ssnocc_string_free(char* s);

SSNOCC_API void ssnocc_design_default(ssnocc_design* design);
SSNOCC_API void ssnocc_sampler_default(ssnocc_sampler_config* config);
SSNOCC_API ssnocc_status ssnocc_design_validate(const ssnocc_design* design);
SSNOCC_API ssnocc_status ssnocc_sampler_validate(const ssnocc_sampler_config* config);

/* JSON snapshots of configurations, for manifests. Free with ssnocc_string_free. */
SSNOCC_API ssnocc_status ssnocc_design_json(const ssnocc_design* design, char** out);
SSNOCC_API ssnocc_status ssnocc_sampler_json(const ssnocc_sampler_config* config, char** out);

/* Writes network.csv, sites.csv, detections.csv and truth.csv for one
 * replicate (numbered from 1) into dir. */
SSNOCC_API ssnocc_status ssnocc_simulate_replicate(const ssnocc_design* design, int replicate,
                                                   const char* dir);

/* covariates may be NULL; columns selects covariates (all when n_columns is 0). */
SSNOCC_API ssnocc_status ssnocc_dataset_load(const char* network, const char* sites,
                                             const char* detections, const char* covariates,
                                             const char* const* columns, size_t n_columns,
                                             ssnocc_dataset** out);
SSNOCC_API size_t ssnocc_dataset_n_sites(const ssnocc_dataset* data);
/* Maximum pairwise stream distance in km. */
SSNOCC_API ssnocc_status ssnocc_dataset_max_distance(const ssnocc_dataset* data, double* out);
SSNOCC_API void ssnocc_dataset_free(ssnocc_dataset* data);

SSNOCC_API ssnocc_status ssnocc_fit_run(const ssnocc_dataset* data, ssnocc_model model,
                                        const ssnocc_sampler_config* config, int standardize,
                                        ssnocc_fit** out);
/* Writes draws.csv and summary.json. */
SSNOCC_API ssnocc_status ssnocc_fit_write(const ssnocc_fit* fit, const char* dir);
SSNOCC_API ssnocc_status ssnocc_fit_summary_json(const ssnocc_fit* fit, char** out);
SSNOCC_API int ssnocc_fit_converged(const ssnocc_fit* fit);
SSNOCC_API void ssnocc_fit_free(ssnocc_fit* fit);

/* Posterior psi at the fitted sites and, when new_sites is given, at new
 * sites. network, sites, new_sites and new_covariates may be NULL. */
SSNOCC_API ssnocc_status ssnocc_predict(const char* fit_dir, const char* network,
                                        const char* sites, const char* new_sites,
                                        const char* new_covariates, int thin, uint64_t seed,
                                        const char* out_csv, size_t* n_rows);

/* Reads fit_dir/draws.csv and writes diagnostics.csv, traces.csv and
 * densities.csv into out_dir. *pass is 1 when every monitored parameter has
 * R-hat < 1.1 and ESS > 100. table_json may be NULL. */
SSNOCC_API ssnocc_status ssnocc_diagnose(const char* fit_dir, const char* out_dir, int* pass,
                                         char** table_json);

/* Runs the simulation study and writes study.csv and study.json. */
SSNOCC_API ssnocc_status ssnocc_study_run(const ssnocc_design* design,
                                          const ssnocc_sampler_config* config,
                                          int fit_nonspatial, int workers, const char* out_dir,
                                          char** report_json);

SSNOCC_API ssnocc_status ssnocc_sha256_file(const char* path, char** hex);

#ifdef __cplusplus
}
#endif

#endif
