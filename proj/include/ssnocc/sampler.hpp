#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssnocc/diagnostics.hpp"
#include "ssnocc/occupancy_model.hpp"
#include "ssnocc/random.hpp"

namespace ssnocc {

struct SamplerConfig {
  int n_chains = 2;
  int n_iterations = 15000;
  int n_burnin = 5000;
  int thin = 1;
  std::uint64_t seed = 1;
  int adapt_window = 50;
  double target_accept = 0.44;
  int workers = 1;

  // Hold sigma / theta at a value instead of sampling them.
  std::optional<double> fixed_sigma;
  std::optional<double> fixed_theta;

  void validate() const;
  int retained_per_chain() const;
};

// Counts of numerical events during sampling.
struct Incidents {
  std::uint64_t bracket_collapses = 0;
  std::uint64_t factorization_failures = 0;
  std::uint64_t evaluation_errors = 0;
  // Factorizations by applied jitter level: none, 1e-10, 1e-8, 1e-6 (x mean diag).
  std::array<std::uint64_t, 4> jitter_histogram{};

  Incidents& operator+=(const Incidents& o);
};

// Random-walk step sizes on the transformed scale, one per hyperparameter
// coordinate, adapted in windows during burn-in.
struct AdaptState {
  std::vector<double> log_step;
  std::vector<int> accepted;   // current window
  std::vector<int> proposed;   // current window
  std::vector<std::uint64_t> total_accepted;
  std::vector<std::uint64_t> total_proposed;
  int window_iterations = 0;
  int batches = 0;
  bool frozen = false;

  static AdaptState initial(std::size_t n_coordinates, double step = 0.3);
  std::vector<double> step_sizes() const;
};

struct SliceOutcome {
  double angle = 0.0;
  double log_likelihood = 0.0;
  bool collapsed = false;
  int evaluations = 0;
};

// Elliptical slice sampling over the angle of the ellipse through the current
// point and an auxiliary normal draw. loglik_at(angle) evaluates the
// likelihood at cos(angle) x + sin(angle) nu; a thrown NumericError or a
// non-finite value shrinks the bracket. If the bracket shrinks below
// min_bracket the current point (angle 0) is kept and `collapsed` is set.
SliceOutcome elliptical_slice_angle(double current_log_likelihood,
                                    const std::function<double(double)>& loglik_at, Rng& rng,
                                    double min_bracket = 1e-10);

// Vector form for an N(0, I) prior.
SliceOutcome elliptical_slice(Eigen::VectorXd& x, double current_log_likelihood,
                              const std::function<double(const Eigen::VectorXd&)>& loglik,
                              Rng& rng, double min_bracket = 1e-10);

// Metropolis accept step; log_ratio >= 0 always accepts.
bool metropolis_accept(double log_ratio, Rng& rng);

// One chain's working state with cached linear predictor pieces.
class ChainSampler {
 public:
  ChainSampler(const OccupancyModel& model, const SamplerConfig& config, ModelState initial);

  const ModelState& state() const { return state_; }
  double log_likelihood() const { return loglik_; }
  const Eigen::VectorXd& linear_predictor() const { return eta_; }
  const Incidents& incidents() const { return incidents_; }
  std::size_t n_hyper_coordinates() const { return coord_count_; }
  // Names of the random-walk coordinates in sweep order.
  std::vector<std::string> hyper_coordinate_names() const;

  // Elliptical slice update of u; beta, p, sigma, theta untouched.
  void ess_update_u(Rng& rng);
  // One sweep of one-at-a-time random-walk Metropolis on (beta, logit p,
  // log sigma, log theta). Steps adapt only when `adapting` is set.
  void rwm_update_hyper(Rng& rng, AdaptState& adapt, bool adapting);

  // Full recomputation of the tracked log posterior (for checks).
  double recompute_log_posterior() const;

 private:
  void refresh_eta();
  double hyper_log_prior() const;

  const OccupancyModel& model_;
  SamplerConfig config_;
  ModelState state_;
  bool sample_u_ = false;
  bool sample_sigma_ = false;
  bool sample_theta_ = false;
  std::size_t coord_count_ = 0;
  LowerTriangularFactor factor_;  // unit-sill factor at state_.theta
  Eigen::VectorXd xb_;
  Eigen::VectorXd field_;  // L1 u
  Eigen::VectorXd eta_;
  double loglik_ = 0.0;
  Incidents incidents_;
  Eigen::MatrixXd work_;
  Eigen::VectorXd scratch_;
};

// Single-step wrappers operating on a bare state.
ModelState ess_update_u(const ModelState& state, const OccupancyModel& model, Rng& rng,
                        const SamplerConfig& config = {});
std::pair<ModelState, AdaptState> rwm_update_hyper(const ModelState& state,
                                                   const OccupancyModel& model, Rng& rng,
                                                   AdaptState adapt, bool adapting,
                                                   const SamplerConfig& config = {});

// Retained draws for one chain; rows are draws.
struct DrawMatrix {
  std::vector<std::string> columns;
  std::vector<int> iterations;
  Eigen::MatrixXd values;

  std::size_t column_index(const std::string& name) const;  // throws if absent
  bool has_column(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  Diagnostic rhat;
  Diagnostic ess;
  bool monitored = false;  // counted toward convergence
};

struct PosteriorSummary {
  std::vector<ParameterSummary> parameters;
  Incidents incidents;
  std::vector<std::string> warnings;
  std::vector<std::string> failed_chains;
  std::size_t retained_draws = 0;  // over all chains

  const ParameterSummary& get(const std::string& name) const;
  // R-hat < 1.1 and ESS > 100 for every monitored parameter.
  bool converged(double rhat_max = 1.1, double ess_min = 100.0) const;
};

struct ChainResult {
  DrawMatrix draws;
  Incidents incidents;
  std::vector<double> step_sizes_at_burnin_end;
  std::vector<double> step_sizes_final;
  std::vector<double> acceptance_rates;  // post-burn-in, per coordinate
};

struct RunResult {
  std::vector<ChainResult> chains;
  PosteriorSummary summary;
};

// Default per-chain starting state; `rng` supplies the jitter on beta.
ModelState initial_state(const OccupancyModel& model, const SamplerConfig& config, Rng& rng);

// Runs config.n_chains chains (chain c seeded with seed xor c), in parallel
// over config.workers threads, and summarizes the retained draws.
RunResult run_chains(const SamplerConfig& config, const OccupancyModel& model);

std::vector<std::string> draw_columns(const OccupancyModel& model);
PosteriorSummary summarize(const std::vector<DrawMatrix>& chains,
                           const std::vector<std::string>& monitored);
// beta*, p, sigma, theta as present in the columns.
std::vector<std::string> monitored_parameters(const std::vector<std::string>& columns);

}  // namespace ssnocc
