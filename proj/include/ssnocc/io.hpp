#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ssnocc/covariance.hpp"
#include "ssnocc/occupancy_model.hpp"
#include "ssnocc/sampler.hpp"
#include "ssnocc/simulation.hpp"
#include "ssnocc/stream_network.hpp"

namespace ssnocc {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

// edge_id,upstream_node,downstream_node,length_km,additive_value
StreamNetwork read_network_csv(const fs::path& path);
void write_network_csv(const fs::path& path, const StreamNetwork& net);

// site_id,edge_id,dist_to_downstream_km[,x,y]
struct SiteTable {
  std::vector<SitePlacement> sites;
  std::optional<SiteCoordinates> coords;
};
SiteTable read_sites_csv(const fs::path& path);
void write_sites_csv(const fs::path& path, const std::vector<SitePlacement>& sites);

// Long format, one row per visit: site_id,visit,detected. Sites appear in
// order of first occurrence; visits are sorted by their index.
std::vector<DetectionHistory> read_detections_csv(const fs::path& path);
void write_detections_csv(const fs::path& path, const std::vector<DetectionHistory>& histories);

// site_id,<name1>,<name2>,...
struct CovariateTable {
  std::vector<std::string> site_ids;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // sites x names
};
// `columns` selects a subset of covariates in the given order (all when empty).
CovariateTable read_covariates_csv(const fs::path& path,
                                   const std::vector<std::string>& columns = {});

// site_id,<covariates>,tau,psi,z
void write_truth_csv(const fs::path& path, const Truth& truth);

struct Standardization {
  bool applied = false;
  std::vector<double> center;
  std::vector<double> scale;
};

// Rows follow site_order. With `standardize`, each column is centered and
// scaled by its sample SD (columns with zero SD are only centered).
DesignMatrix build_design(const std::vector<std::string>& site_order,
                          const CovariateTable* covariates, bool standardize,
                          Standardization& transform);
// Applies an existing transform (prediction at new sites).
DesignMatrix apply_design(const std::vector<std::string>& site_order,
                          const CovariateTable* covariates, const std::vector<std::string>& names,
                          const Standardization& transform);

struct DatasetPaths {
  fs::path network;
  fs::path sites;
  fs::path detections;
  std::optional<fs::path> covariates;
};

struct Dataset {
  DatasetPaths paths;
  StreamNetwork network;
  SiteTable sites;
  std::vector<DetectionHistory> histories;  // in site order
  std::optional<CovariateTable> covariates;
};

// Loads and cross-checks the files; throws DataError listing site ids that
// appear in one file but not another.
Dataset load_dataset(const DatasetPaths& paths,
                     const std::vector<std::string>& covariate_columns = {});

struct FitOptions {
  SpatialStructure structure = SpatialStructure::TailDown;
  SamplerConfig sampler;
  bool standardize = true;
};

struct FitResult {
  FitOptions options;
  DatasetPaths paths;
  Priors priors;
  double max_distance = 0.0;  // 0 for the nonspatial model
  Standardization standardization;
  std::vector<std::string> covariate_names;
  std::vector<std::string> site_ids;
  RunResult run;
};

FitResult fit_dataset(const Dataset& data, const FitOptions& options);

// chain,iteration,<parameters...>; 17 significant digits.
void write_draws_csv(const fs::path& path, const std::vector<DrawMatrix>& chains);
std::vector<DrawMatrix> read_draws_csv(const fs::path& path);

nlohmann::json summary_json(const FitResult& fit);
// Writes draws.csv and summary.json.
void write_fit_outputs(const FitResult& fit, const fs::path& dir);

// Two-decimal "mean (lower, upper)" string.
std::string format_estimate(double mean, double lower, double upper);

struct PredictOptions {
  fs::path fit_dir;
  std::optional<fs::path> network;  // default: the fit's input
  std::optional<fs::path> sites;    // default: the fit's input
  std::optional<fs::path> new_sites;
  std::optional<fs::path> new_covariates;
  int thin = 1;
  std::uint64_t seed = 1;
};

struct SitePrediction {
  std::string site_id;
  bool observed = true;
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

// Throws ParameterError when thinning leaves no draws and PlacementError
// when a new site is not on the network.
std::vector<SitePrediction> predict(const PredictOptions& options);
void write_predictions_csv(const fs::path& path, const std::vector<SitePrediction>& preds);

struct DiagnoseResult {
  std::vector<ParameterSummary> table;  // monitored parameters only
  bool pass = true;
};

DiagnoseResult diagnose_draws(const std::vector<DrawMatrix>& chains, double rhat_max = 1.1,
                              double ess_min = 100.0);
// diagnostics.csv, traces.csv and densities.csv.
void write_diagnostics(const fs::path& dir, const std::vector<DrawMatrix>& chains,
                       const DiagnoseResult& result);

// Study outputs: study.csv (one row per replicate per model) and study.json.
void write_study_outputs(const fs::path& dir, const StudyReport& report);
nlohmann::json study_json(const StudyReport& report);
nlohmann::json design_json(const SimulationDesign& design);
nlohmann::json sampler_json(const SamplerConfig& config);

// Lowercase hex SHA-256 digest of a file's bytes.
std::string sha256_file(const fs::path& path);

// Creates the directory (and parents); throws IoError when it is not writable.
void ensure_output_dir(const fs::path& dir);

}  // namespace ssnocc
