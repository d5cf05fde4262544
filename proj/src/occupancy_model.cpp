#include "ssnocc/occupancy_model.hpp"

#include <algorithm>
#include <numbers>

#include "ssnocc/error.hpp"

namespace ssnocc {

DesignMatrix DesignMatrix::intercept_only(std::size_t n_sites) {
  DesignMatrix x;
  x.values = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n_sites), 1);
  return x;
}

void DesignMatrix::validate() const {
  if (values.cols() < 1) throw DataError("design matrix has no intercept column");
  if (static_cast<std::size_t>(values.cols()) != covariate_names.size() + 1)
    throw DataError("design matrix column count does not match covariate names");
  if (!(values.col(0).array() == 1.0).all())
    throw DataError("first design matrix column must be identically 1");
  if (!values.allFinite()) throw DataError("design matrix has non-finite entries");
}

int DetectionHistory::detections() const {
  return static_cast<int>(std::count(visits.begin(), visits.end(), std::uint8_t{1}));
}

Priors Priors::for_max_distance(double max_distance) {
  const double d = max_distance > 0.0 ? max_distance : 1.0;
  Priors p;
  p.theta_min = 0.01 * d;
  p.theta_max = 2.0 * d;
  return p;
}

void Priors::validate() const {
  if (!(beta_sd > 0.0)) throw ParameterError("prior sd for beta must be positive");
  if (!(sigma_max > 0.0)) throw ParameterError("sigma_max must be positive");
  if (!(theta_min > 0.0) || !(theta_min < theta_max))
    throw ParameterError("theta prior bounds must satisfy 0 < theta_min < theta_max");
}

Eigen::VectorXd occupancy_probabilities(const ModelState& state, const DesignMatrix& x,
                                        const Eigen::MatrixXd& factor) {
  const Eigen::Index n = x.values.rows();
  if (x.values.cols() != state.beta.size())
    throw ParameterError("beta length does not match design matrix columns");
  Eigen::VectorXd eta = x.values * state.beta;
  if (state.u.size() > 0) {
    if (factor.rows() != n || factor.cols() != state.u.size())
      throw ParameterError("covariance factor does not match the number of sites");
    eta.noalias() += factor.triangularView<Eigen::Lower>() * state.u;
  }
  return eta.unaryExpr([](double v) { return inv_logit(v); });
}

double site_log_likelihood(double psi, double p, const DetectionHistory& history) {
  const int d = history.detections();
  const int j = history.n_visits();
  const double occupied = std::log(psi) + d * std::log(p) + (j - d) * std::log1p(-p);
  if (d > 0) return occupied;
  const double empty = std::log1p(-psi);
  const double m = std::max(occupied, empty);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(occupied - m) + std::exp(empty - m));
}

double site_log_likelihood_logit(double eta, double log_p, double log1m_p, int detections,
                                 int visits) {
  const double occupied =
      log_inv_logit(eta) + detections * log_p + (visits - detections) * log1m_p;
  if (detections > 0) return occupied;
  const double empty = log_inv_logit(-eta);
  const double m = std::max(occupied, empty);
  return m + std::log1p(std::exp(std::min(occupied, empty) - m));
}

const LowerTriangularFactor& FactorCache::get(const OccupancyModel& model, double theta) {
  if (!valid_ || theta_ != theta) {
    valid_ = false;
    model.unit_factor_into(theta, work_, factor_);
    theta_ = theta;
    valid_ = true;
  }
  return factor_;
}

OccupancyModel::OccupancyModel(DesignMatrix x, std::vector<DetectionHistory> histories,
                               std::optional<PairDistanceTable> dist, Priors priors,
                               SpatialStructure structure)
    : x_(std::move(x)),
      histories_(std::move(histories)),
      dist_(std::move(dist)),
      priors_(priors),
      structure_(structure) {
  x_.validate();
  priors_.validate();
  n_sites_ = x_.n_sites();
  if (histories_.size() != n_sites_)
    throw DataError("number of detection histories (" + std::to_string(histories_.size()) +
                    ") does not match design matrix rows (" + std::to_string(n_sites_) + ")");
  if (spatial() && !dist_) throw DataError("tail-down model requires stream distances");
  if (dist_ && dist_->size() != n_sites_)
    throw DataError("distance table does not match the number of sites");
  detections_.resize(static_cast<Eigen::Index>(n_sites_));
  visits_.resize(static_cast<Eigen::Index>(n_sites_));
  for (std::size_t i = 0; i < n_sites_; ++i) {
    const auto& h = histories_[i];
    if (h.visits.empty()) throw DataError("site '" + h.site_id + "' has no visits");
    for (auto v : h.visits)
      if (v > 1) throw DataError("site '" + h.site_id + "' has a detection value other than 0/1");
    if (dist_ && dist_->site_ids[i] != h.site_id)
      throw DataError("site order mismatch between distances and detections at '" +
                      h.site_id + "'");
    site_ids_.push_back(h.site_id);
    detections_[static_cast<Eigen::Index>(i)] = h.detections();
    visits_[static_cast<Eigen::Index>(i)] = h.n_visits();
  }
}

const PairDistanceTable& OccupancyModel::distances() const {
  if (!dist_) throw DataError("model has no distance table");
  return *dist_;
}

double OccupancyModel::log_likelihood(const Eigen::VectorXd& eta, double p) const {
  if (!likelihood_enabled_) return 0.0;
  if (!(p > 0.0 && p < 1.0)) return kNegInf;
  const double log_p = std::log(p);
  const double log1m_p = std::log1p(-p);
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    total += site_log_likelihood_logit(eta[i], log_p, log1m_p, detections_[i], visits_[i]);
  return total;
}

double OccupancyModel::log_prior_beta(const Eigen::VectorXd& beta) const {
  const double sd = priors_.beta_sd;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd);
  return static_cast<double>(beta.size()) * norm - 0.5 * beta.squaredNorm() / (sd * sd);
}

double OccupancyModel::log_prior_p(double p) const {
  return (p > 0.0 && p < 1.0) ? 0.0 : kNegInf;
}

double OccupancyModel::log_prior_sigma(double sigma) const {
  return (sigma >= 0.0 && sigma <= priors_.sigma_max) ? -std::log(priors_.sigma_max) : kNegInf;
}

double OccupancyModel::log_prior_theta(double theta) const {
  return (theta >= priors_.theta_min && theta <= priors_.theta_max)
             ? -std::log(priors_.theta_max - priors_.theta_min)
             : kNegInf;
}

double OccupancyModel::log_prior_u(const Eigen::VectorXd& u) const {
  return -0.5 * u.squaredNorm() -
         0.5 * static_cast<double>(u.size()) * std::log(2.0 * std::numbers::pi);
}

LowerTriangularFactor OccupancyModel::unit_factor(double theta) const {
  Eigen::MatrixXd work;
  LowerTriangularFactor out;
  unit_factor_into(theta, work, out);
  return out;
}

void OccupancyModel::unit_factor_into(double theta, Eigen::MatrixXd& work,
                                      LowerTriangularFactor& out) const {
  tail_down_correlation(distances(), theta, work);
  out = cholesky_lower(work);
}

LogPosteriorTerms OccupancyModel::log_posterior_terms(const ModelState& state,
                                                      FactorCache& cache) const {
  LogPosteriorTerms t;
  if (state.beta.size() != static_cast<Eigen::Index>(n_coefficients()))
    throw ParameterError("beta length does not match design matrix columns");
  t.beta = log_prior_beta(state.beta);
  t.p = log_prior_p(state.p);
  if (spatial()) {
    if (state.u.size() != static_cast<Eigen::Index>(n_sites_))
      throw ParameterError("latent vector length does not match the number of sites");
    t.sigma = log_prior_sigma(state.sigma);
    t.theta = log_prior_theta(state.theta);
    t.u = log_prior_u(state.u);
  }
  if (t.total() == kNegInf) {
    t.log_likelihood = kNegInf;
    return t;
  }
  t.log_likelihood = log_likelihood(linear_predictor(state, cache), state.p);
  return t;
}

double OccupancyModel::log_posterior(const ModelState& state, FactorCache& cache) const {
  return log_posterior_terms(state, cache).total();
}

double OccupancyModel::log_posterior(const ModelState& state) const {
  FactorCache cache;
  return log_posterior(state, cache);
}

Eigen::VectorXd OccupancyModel::linear_predictor(const ModelState& state,
                                                 FactorCache& cache) const {
  Eigen::VectorXd eta = x_.values * state.beta;
  if (spatial() && state.sigma != 0.0) {
    const auto& f = cache.get(*this, state.theta);
    const Eigen::VectorXd field = f.lower.triangularView<Eigen::Lower>() * state.u;
    eta += state.sigma * field;
  }
  return eta;
}

double log_posterior(const ModelState& state, const DesignMatrix& x,
                     std::span<const DetectionHistory> histories, const PairDistanceTable& dist,
                     const Priors& priors) {
  OccupancyModel model(x, {histories.begin(), histories.end()}, dist, priors,
                       SpatialStructure::TailDown);
  return model.log_posterior(state);
}

}  // namespace ssnocc
