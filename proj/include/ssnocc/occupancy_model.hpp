#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssnocc/covariance.hpp"
#include "ssnocc/stream_network.hpp"

namespace ssnocc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double inv_logit(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double logit(double p) { return std::log(p) - std::log1p(-p); }
// log(inv_logit(x)) without overflow.
inline double log_inv_logit(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// S x (P+1) covariate matrix whose first column is the intercept.
struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> covariate_names;  // P names, intercept excluded

  static DesignMatrix intercept_only(std::size_t n_sites);
  std::size_t n_sites() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_coefficients() const { return static_cast<std::size_t>(values.cols()); }
  // Throws DataError on a non-unit first column or non-finite entries.
  void validate() const;
};

struct DetectionHistory {
  std::string site_id;
  std::vector<std::uint8_t> visits;

  int detections() const;
  int n_visits() const { return static_cast<int>(visits.size()); }
};

// Full sampler state. The spatial effect is tau = sigma * L1(theta) * u,
// where L1 is the Cholesky factor of the unit-sill tail-down correlation.
struct ModelState {
  Eigen::VectorXd beta;
  double p = 0.5;
  double sigma = 1.0;
  double theta = 1.0;
  Eigen::VectorXd u;
};

struct Priors {
  double beta_sd = 1.5;
  double sigma_max = 10.0;
  double theta_min = 0.01;
  double theta_max = 2.0;

  // theta ~ U(0.01 D, 2 D) for maximum pairwise stream distance D (1 km when D is 0).
  static Priors for_max_distance(double max_distance);
  void validate() const;
};

enum class SpatialStructure { TailDown, NonSpatial };

// logit^-1(X beta + L u) with L the factor of the full (scaled) covariance.
Eigen::VectorXd occupancy_probabilities(const ModelState& state, const DesignMatrix& x,
                                        const Eigen::MatrixXd& factor);

// Marginal log-likelihood of one site's history, latent state summed out.
double site_log_likelihood(double psi, double p, const DetectionHistory& history);
// Same quantity, parameterised by the logit of psi and sufficient statistics.
double site_log_likelihood_logit(double eta, double log_p, double log1m_p, int detections,
                                 int visits);

struct LogPosteriorTerms {
  double log_likelihood = 0.0;
  double beta = 0.0;
  double p = 0.0;
  double sigma = 0.0;
  double theta = 0.0;
  double u = 0.0;
  double total() const { return log_likelihood + beta + p + sigma + theta + u; }
};

class OccupancyModel;

// theta -> unit-sill Cholesky factor, one entry. Owned per thread.
class FactorCache {
 public:
  const LowerTriangularFactor& get(const OccupancyModel& model, double theta);
  void invalidate() { valid_ = false; }

 private:
  bool valid_ = false;
  double theta_ = 0.0;
  LowerTriangularFactor factor_;
  Eigen::MatrixXd work_;
};

// Immutable data + priors for one fit.
class OccupancyModel {
 public:
  OccupancyModel(DesignMatrix x, std::vector<DetectionHistory> histories,
                 std::optional<PairDistanceTable> dist, Priors priors,
                 SpatialStructure structure);

  std::size_t n_sites() const { return n_sites_; }
  std::size_t n_coefficients() const { return x_.n_coefficients(); }
  bool spatial() const { return structure_ == SpatialStructure::TailDown; }
  SpatialStructure structure() const { return structure_; }
  const DesignMatrix& design() const { return x_; }
  const std::vector<DetectionHistory>& histories() const { return histories_; }
  const PairDistanceTable& distances() const;
  const Priors& priors() const { return priors_; }
  const std::vector<std::string>& site_ids() const { return site_ids_; }
  const Eigen::VectorXi& detections() const { return detections_; }
  const Eigen::VectorXi& visits() const { return visits_; }

  // Prior-only mode: the likelihood contributes zero. Used for prior checks.
  bool likelihood_enabled() const { return likelihood_enabled_; }
  void set_likelihood_enabled(bool on) { likelihood_enabled_ = on; }

  // Sum of site log-likelihoods for linear predictor eta.
  double log_likelihood(const Eigen::VectorXd& eta, double p) const;

  double log_prior_beta(const Eigen::VectorXd& beta) const;
  double log_prior_p(double p) const;
  double log_prior_sigma(double sigma) const;
  double log_prior_theta(double theta) const;
  double log_prior_u(const Eigen::VectorXd& u) const;

  // Unit-sill tail-down factor at theta. Throws NumericError.
  LowerTriangularFactor unit_factor(double theta) const;
  void unit_factor_into(double theta, Eigen::MatrixXd& work, LowerTriangularFactor& out) const;

  // Full evaluation; outside the prior support the total is -inf. Throws
  // NumericError if the covariance factorization fails.
  LogPosteriorTerms log_posterior_terms(const ModelState& state, FactorCache& cache) const;
  double log_posterior(const ModelState& state, FactorCache& cache) const;
  double log_posterior(const ModelState& state) const;

  // Linear predictor X beta + sigma L1(theta) u (X beta for the nonspatial model).
  Eigen::VectorXd linear_predictor(const ModelState& state, FactorCache& cache) const;

 private:
  DesignMatrix x_;
  std::vector<DetectionHistory> histories_;
  std::optional<PairDistanceTable> dist_;
  Priors priors_;
  SpatialStructure structure_;
  std::size_t n_sites_ = 0;
  std::vector<std::string> site_ids_;
  Eigen::VectorXi detections_;
  Eigen::VectorXi visits_;
  bool likelihood_enabled_ = true;
};

// Log posterior of the tail-down model; -inf outside the prior support.
// Throws NumericError when the covariance cannot be factored.
double log_posterior(const ModelState& state, const DesignMatrix& x,
                     std::span<const DetectionHistory> histories, const PairDistanceTable& dist,
                     const Priors& priors);

}  // namespace ssnocc
