#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssnocc/occupancy_model.hpp"
#include "ssnocc/random.hpp"
#include "ssnocc/sampler.hpp"
#include "ssnocc/stream_network.hpp"

namespace ssnocc {

struct SimulationDesign {
  int n_sites = 100;
  int n_visits = 5;
  int n_replicates = 100;
  std::vector<double> true_beta{0.5, 1.0};  // intercept first; one N(0,1) covariate per slope
  double true_p = 0.6;
  double true_sigma2 = 2.0;
  double true_theta = 10.0;
  double mean_edge_length = 5.0;  // km, exponential edge lengths in the generator
  std::uint64_t network_seed = 1;
  std::uint64_t data_seed = 2;

  void validate() const;
  double true_theta_over_sigma2() const { return true_theta / true_sigma2; }
};

struct GeneratedNetwork {
  StreamNetwork network;
  std::vector<SitePlacement> sites;
};

// Random dendritic tree grown by attaching one or two upstream edges to a
// random tip until there are at least n_sites edges; one site on each of
// n_sites distinct random edges at a uniform offset.
GeneratedNetwork generate_network(int n_sites, Rng& rng, double mean_edge_length = 5.0);

struct Truth {
  std::vector<std::string> site_ids;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // S x P, without the intercept
  Eigen::VectorXd tau;
  Eigen::VectorXd psi;
  std::vector<int> z;
};

struct SimulatedData {
  DesignMatrix design;
  std::vector<DetectionHistory> histories;
  Truth truth;
};

// Draws covariates, the tail-down spatial effect, latent occupancy and
// detections. Throws NumericError if the covariance cannot be factored.
SimulatedData simulate_dataset(const SimulationDesign& design, const StreamNetwork& net,
                               const std::vector<SitePlacement>& sites, Rng& rng);
// Same, reusing a distance table in site order.
SimulatedData simulate_dataset(const SimulationDesign& design, const PairDistanceTable& dist,
                               Rng& rng);

struct BiasResult {
  double value = 0.0;
  bool absolute = false;  // truth was 0: value is the absolute bias
};

// (mean(estimates) - truth) / truth.
BiasResult relative_bias(const std::vector<double>& estimates, double truth);

// Square root of the mean squared difference.
double rmspe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);

struct ModelEstimates {
  bool failed = false;
  std::string error;
  std::vector<double> beta;  // posterior means
  double p = 0.0;
  // NaN for the nonspatial model.
  double sigma2 = 0.0;
  double theta = 0.0;
  double theta_over_sigma2 = 0.0;
  double rmspe = 0.0;
  double squared_error_sum = 0.0;  // over sites, for pooled RMSPE
  std::size_t n_sites = 0;
  bool converged = false;
  double max_rhat = 0.0;
  double min_ess = 0.0;
  // 95% interval coverage of the generating values.
  std::vector<bool> beta_covered;
  bool p_covered = false;
};

struct ReplicateReport {
  int replicate_id = 0;
  std::uint64_t sampler_seed = 0;
  ModelEstimates spatial;
  ModelEstimates nonspatial;
};

struct ModelAggregate {
  // parameter name -> relative bias
  std::vector<std::pair<std::string, BiasResult>> bias;
  double rmspe = 0.0;
  int n_replicates = 0;
};

struct StudyReport {
  SimulationDesign design;
  SamplerConfig sampler;
  std::vector<ReplicateReport> replicates;
  ModelAggregate spatial_all;
  ModelAggregate spatial_converged;
  ModelAggregate nonspatial_all;
  ModelAggregate nonspatial_converged;
};

struct StudyOptions {
  bool fit_nonspatial = true;
  int workers = 1;  // replicate-level parallelism
};

std::uint64_t replicate_sampler_seed(std::uint64_t base, int replicate);

// Fits one model to a simulated replicate and compares with the truth.
ModelEstimates fit_and_score(const SimulatedData& data, const PairDistanceTable& dist,
                             SpatialStructure structure, const SimulationDesign& design,
                             SamplerConfig sampler);

struct SimulatedReplicate {
  GeneratedNetwork generated;
  SimulatedData data;
};

// Network and data for one replicate (numbered from 1), drawn from the
// design's network and data seeds.
SimulatedReplicate simulate_replicate(const SimulationDesign& design, int replicate);

ReplicateReport run_replicate(const SimulationDesign& design, const SamplerConfig& sampler,
                              int replicate, bool fit_nonspatial = true);

StudyReport run_study(const SimulationDesign& design, const SamplerConfig& sampler,
                      const StudyOptions& options = {});

ModelAggregate aggregate(const std::vector<ReplicateReport>& reps, const SimulationDesign& design,
                         bool spatial, bool converged_only);

}  // namespace ssnocc
