#include "ssnocc/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <thread>

#include "ssnocc/error.hpp"

namespace ssnocc {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ParameterError("n_chains must be at least 1");
  if (n_iterations < 1) throw ParameterError("n_iterations must be positive");
  if (n_burnin < 0 || n_burnin >= n_iterations)
    throw ParameterError("n_burnin must satisfy 0 <= n_burnin < n_iterations");
  if (thin < 1) throw ParameterError("thin must be at least 1");
  if (adapt_window < 1) throw ParameterError("adapt_window must be at least 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ParameterError("target_accept must lie in (0, 1)");
  if (workers < 1) throw ParameterError("workers must be at least 1");
  if (fixed_sigma && !(*fixed_sigma >= 0.0)) throw ParameterError("fixed sigma must be >= 0");
  if (fixed_theta && !(*fixed_theta > 0.0)) throw ParameterError("fixed theta must be > 0");
}

int SamplerConfig::retained_per_chain() const {
  return (n_iterations - n_burnin + thin - 1) / thin;
}

Incidents& Incidents::operator+=(const Incidents& o) {
  bracket_collapses += o.bracket_collapses;
  factorization_failures += o.factorization_failures;
  evaluation_errors += o.evaluation_errors;
  for (std::size_t k = 0; k < jitter_histogram.size(); ++k)
    jitter_histogram[k] += o.jitter_histogram[k];
  return *this;
}

AdaptState AdaptState::initial(std::size_t n_coordinates, double step) {
  AdaptState a;
  a.log_step.assign(n_coordinates, std::log(step));
  a.accepted.assign(n_coordinates, 0);
  a.proposed.assign(n_coordinates, 0);
  a.total_accepted.assign(n_coordinates, 0);
  a.total_proposed.assign(n_coordinates, 0);
  return a;
}

std::vector<double> AdaptState::step_sizes() const {
  std::vector<double> s;
  for (double l : log_step) s.push_back(std::exp(l));
  return s;
}

SliceOutcome elliptical_slice_angle(double current_log_likelihood,
                                    const std::function<double(double)>& loglik_at, Rng& rng,
                                    double min_bracket) {
  SliceOutcome out;
  const double log_y = current_log_likelihood + std::log(uniform01(rng));
  double angle = uniform01(rng) * 2.0 * std::numbers::pi;
  double lo = angle - 2.0 * std::numbers::pi;
  double hi = angle;
  while (true) {
    ++out.evaluations;
    double ll;
    try {
      ll = loglik_at(angle);
    } catch (const NumericError&) {
      ll = kNegInf;
    }
    if (std::isfinite(ll) && ll > log_y) {
      out.angle = angle;
      out.log_likelihood = ll;
      return out;
    }
    if (angle < 0.0)
      lo = angle;
    else
      hi = angle;
    if (hi - lo < min_bracket) {
      out.angle = 0.0;
      out.log_likelihood = current_log_likelihood;
      out.collapsed = true;
      return out;
    }
    angle = lo + uniform01(rng) * (hi - lo);
  }
}

SliceOutcome elliptical_slice(Eigen::VectorXd& x, double current_log_likelihood,
                              const std::function<double(const Eigen::VectorXd&)>& loglik,
                              Rng& rng, double min_bracket) {
  Eigen::VectorXd nu(x.size());
  for (Eigen::Index i = 0; i < nu.size(); ++i) nu[i] = standard_normal(rng);
  Eigen::VectorXd trial(x.size());
  auto at = [&](double angle) {
    trial = std::cos(angle) * x + std::sin(angle) * nu;
    return loglik(trial);
  };
  SliceOutcome out = elliptical_slice_angle(current_log_likelihood, at, rng, min_bracket);
  if (!out.collapsed) x = std::cos(out.angle) * x + std::sin(out.angle) * nu;
  return out;
}

bool metropolis_accept(double log_ratio, Rng& rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(uniform01(rng)) < log_ratio;
}

ChainSampler::ChainSampler(const OccupancyModel& model, const SamplerConfig& config,
                           ModelState initial)
    : model_(model), config_(config), state_(std::move(initial)) {
  if (state_.beta.size() != static_cast<Eigen::Index>(model_.n_coefficients()))
    throw ParameterError("initial beta has the wrong length");
  const bool spatial = model_.spatial();
  sample_sigma_ = spatial && !config_.fixed_sigma;
  sample_theta_ = spatial && !config_.fixed_theta;
  sample_u_ = spatial && !(config_.fixed_sigma && *config_.fixed_sigma == 0.0);
  if (config_.fixed_sigma) state_.sigma = *config_.fixed_sigma;
  if (config_.fixed_theta) state_.theta = *config_.fixed_theta;
  coord_count_ = model_.n_coefficients() + 1 + (sample_sigma_ ? 1 : 0) + (sample_theta_ ? 1 : 0) +
                 (sample_sigma_ && sample_theta_ ? 1 : 0);

  xb_ = model_.design().values * state_.beta;
  if (spatial) {
    if (state_.u.size() != static_cast<Eigen::Index>(model_.n_sites()))
      throw ParameterError("initial u has the wrong length");
    model_.unit_factor_into(state_.theta, work_, factor_);
    incidents_.jitter_histogram[static_cast<std::size_t>(factor_.jitter_level)]++;
    field_ = factor_.lower.triangularView<Eigen::Lower>() * state_.u;
  } else {
    field_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model_.n_sites()));
  }
  refresh_eta();
  loglik_ = model_.log_likelihood(eta_, state_.p);
  if (!std::isfinite(loglik_) || !std::isfinite(hyper_log_prior()))
    throw NumericError("initial state has non-finite log posterior");
}

std::vector<std::string> ChainSampler::hyper_coordinate_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < model_.n_coefficients(); ++k)
    names.push_back("beta" + std::to_string(k));
  names.push_back("logit_p");
  if (sample_sigma_) names.push_back("log_sigma");
  if (sample_theta_) names.push_back("log_theta");
  if (sample_sigma_ && sample_theta_) names.push_back("log_sigma_log_theta_ridge");
  return names;
}

void ChainSampler::refresh_eta() {
  if (model_.spatial())
    eta_ = xb_ + state_.sigma * field_;
  else
    eta_ = xb_;
}

double ChainSampler::hyper_log_prior() const {
  double lp = model_.log_prior_beta(state_.beta) + model_.log_prior_p(state_.p);
  if (model_.spatial())
    lp += model_.log_prior_sigma(state_.sigma) + model_.log_prior_theta(state_.theta);
  return lp;
}

double ChainSampler::recompute_log_posterior() const {
  FactorCache cache;
  return model_.log_posterior(state_, cache);
}

void ChainSampler::ess_update_u(Rng& rng) {
  if (!sample_u_) return;
  const Eigen::Index n = static_cast<Eigen::Index>(model_.n_sites());
  Eigen::VectorXd nu(n);
  for (Eigen::Index i = 0; i < n; ++i) nu[i] = standard_normal(rng);
  const Eigen::VectorXd l_nu = factor_.lower.triangularView<Eigen::Lower>() * nu;
  Eigen::VectorXd trial(n);
  auto at = [&](double angle) {
    trial = xb_ + state_.sigma * (std::cos(angle) * field_ + std::sin(angle) * l_nu);
    return model_.log_likelihood(trial, state_.p);
  };
  const SliceOutcome out = elliptical_slice_angle(loglik_, at, rng);
  if (out.collapsed) {
    incidents_.bracket_collapses++;
    return;
  }
  const double c = std::cos(out.angle);
  const double s = std::sin(out.angle);
  state_.u = c * state_.u + s * nu;
  field_ = c * field_ + s * l_nu;
  refresh_eta();
  loglik_ = out.log_likelihood;
}

void ChainSampler::rwm_update_hyper(Rng& rng, AdaptState& adapt, bool adapting) {
  if (adapt.log_step.size() != coord_count_)
    throw ParameterError("adapt state does not match the number of coordinates");
  const auto& x = model_.design().values;
  const double beta_var = model_.priors().beta_sd * model_.priors().beta_sd;
  std::size_t c = 0;
  auto record = [&](std::size_t coord, bool accepted) {
    adapt.proposed[coord]++;
    adapt.total_proposed[coord]++;
    if (accepted) {
      adapt.accepted[coord]++;
      adapt.total_accepted[coord]++;
    }
  };
  auto step = [&](std::size_t coord) {
    return std::exp(adapt.log_step[coord]) * standard_normal(rng);
  };

  // Regression coefficients, untransformed.
  for (Eigen::Index k = 0; k < state_.beta.size(); ++k, ++c) {
    const double cur = state_.beta[k];
    const double prop = cur + step(c);
    const double delta = prop - cur;
    scratch_ = eta_ + delta * x.col(k);
    const double ll = model_.log_likelihood(scratch_, state_.p);
    const double log_ratio = ll - loglik_ - 0.5 * (prop * prop - cur * cur) / beta_var;
    const bool ok = std::isfinite(ll) && metropolis_accept(log_ratio, rng);
    if (ok) {
      state_.beta[k] = prop;
      xb_ += delta * x.col(k);
      eta_.swap(scratch_);
      loglik_ = ll;
    }
    record(c, ok);
  }

  // Detection probability on the logit scale.
  {
    const double cur = state_.p;
    const double prop = inv_logit(logit(cur) + step(c));
    bool ok = false;
    if (prop > 0.0 && prop < 1.0) {
      const double ll = model_.log_likelihood(eta_, prop);
      const double jac = std::log(prop) + std::log1p(-prop) - std::log(cur) - std::log1p(-cur);
      ok = std::isfinite(ll) && metropolis_accept(ll - loglik_ + jac, rng);
      if (ok) {
        state_.p = prop;
        loglik_ = ll;
      }
    }
    record(c, ok);
    ++c;
  }

  if (sample_sigma_) {
    const double cur = state_.sigma;
    const double prop = cur * std::exp(step(c));
    bool ok = false;
    if (std::isfinite(model_.log_prior_sigma(prop)) && prop > 0.0) {
      scratch_ = xb_ + prop * field_;
      const double ll = model_.log_likelihood(scratch_, state_.p);
      ok = std::isfinite(ll) && metropolis_accept(ll - loglik_ + std::log(prop / cur), rng);
      if (ok) {
        state_.sigma = prop;
        eta_.swap(scratch_);
        loglik_ = ll;
      }
    }
    record(c, ok);
    ++c;
  }

  // Proposal for (sigma, theta) that refactors the correlation matrix.
  auto try_range = [&](double prop_sigma, double prop_theta, double log_jacobian) {
    if (!std::isfinite(model_.log_prior_theta(prop_theta)) ||
        !std::isfinite(model_.log_prior_sigma(prop_sigma)) || !(prop_sigma > 0.0))
      return false;
    LowerTriangularFactor f;
    try {
      model_.unit_factor_into(prop_theta, work_, f);
      incidents_.jitter_histogram[static_cast<std::size_t>(f.jitter_level)]++;
    } catch (const NumericError&) {
      incidents_.factorization_failures++;
      return false;
    }
    Eigen::VectorXd field = f.lower.triangularView<Eigen::Lower>() * state_.u;
    scratch_ = xb_ + prop_sigma * field;
    const double ll = model_.log_likelihood(scratch_, state_.p);
    if (!std::isfinite(ll) || !metropolis_accept(ll - loglik_ + log_jacobian, rng)) return false;
    state_.sigma = prop_sigma;
    state_.theta = prop_theta;
    factor_ = std::move(f);
    field_.swap(field);
    eta_.swap(scratch_);
    loglik_ = ll;
    return true;
  };

  if (sample_theta_) {
    const double e = step(c);
    record(c, try_range(state_.sigma, state_.theta * std::exp(e), e));
    ++c;
  }

  // Joint move along theta / sigma^2 = const.
  if (sample_sigma_ && sample_theta_) {
    const double e = step(c);
    record(c, try_range(state_.sigma * std::exp(e), state_.theta * std::exp(2.0 * e), 3.0 * e));
    ++c;
  }

  if (!adapting) {
    adapt.frozen = true;
    return;
  }
  if (++adapt.window_iterations < config_.adapt_window) return;
  adapt.batches++;
  const double gain = 2.0 / std::sqrt(static_cast<double>(adapt.batches));
  for (std::size_t k = 0; k < coord_count_; ++k) {
    const double rate = adapt.proposed[k] > 0
                            ? static_cast<double>(adapt.accepted[k]) / adapt.proposed[k]
                            : config_.target_accept;
    adapt.log_step[k] += gain * (rate - config_.target_accept);
    adapt.accepted[k] = 0;
    adapt.proposed[k] = 0;
  }
  adapt.window_iterations = 0;
}

ModelState ess_update_u(const ModelState& state, const OccupancyModel& model, Rng& rng,
                        const SamplerConfig& config) {
  ChainSampler chain(model, config, state);
  chain.ess_update_u(rng);
  return chain.state();
}

std::pair<ModelState, AdaptState> rwm_update_hyper(const ModelState& state,
                                                   const OccupancyModel& model, Rng& rng,
                                                   AdaptState adapt, bool adapting,
                                                   const SamplerConfig& config) {
  ChainSampler chain(model, config, state);
  chain.rwm_update_hyper(rng, adapt, adapting);
  return {chain.state(), std::move(adapt)};
}

std::size_t DrawMatrix::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ParameterError("no draws for parameter '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool DrawMatrix::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::vector<double> DrawMatrix::column(const std::string& name) const {
  const auto j = static_cast<Eigen::Index>(column_index(name));
  std::vector<double> v(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) v[static_cast<std::size_t>(i)] = values(i, j);
  return v;
}

const ParameterSummary& PosteriorSummary::get(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw ParameterError("no summary for parameter '" + name + "'");
}

bool PosteriorSummary::converged(double rhat_max, double ess_min) const {
  for (const auto& p : parameters) {
    if (!p.monitored) continue;
    if (!(p.rhat.value < rhat_max) || !(p.ess.value > ess_min)) return false;
  }
  return true;
}

ModelState initial_state(const OccupancyModel& model, const SamplerConfig& config, Rng& rng) {
  ModelState s;
  const auto k = static_cast<Eigen::Index>(model.n_coefficients());
  s.beta.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) s.beta[i] = 0.1 * standard_normal(rng);

  long det = 0;
  long vis = 0;
  for (Eigen::Index i = 0; i < model.detections().size(); ++i) {
    if (model.detections()[i] > 0) {
      det += model.detections()[i];
      vis += model.visits()[i];
    }
  }
  const double naive = vis > 0 ? static_cast<double>(det) / static_cast<double>(vis) : 0.5;
  s.p = std::clamp(naive, 0.1, 0.9);

  if (model.spatial()) {
    const auto& pr = model.priors();
    s.sigma = config.fixed_sigma.value_or(std::min(1.0, 0.5 * pr.sigma_max));
    s.theta = config.fixed_theta.value_or(
        std::clamp(model.distances().median_pairwise_distance(), pr.theta_min, pr.theta_max));
    s.u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_sites()));
  } else {
    s.sigma = 0.0;
    s.theta = 0.0;
  }
  return s;
}

std::vector<std::string> draw_columns(const OccupancyModel& model) {
  std::vector<std::string> cols;
  for (std::size_t k = 0; k < model.n_coefficients(); ++k) cols.push_back("beta" + std::to_string(k));
  cols.push_back("p");
  if (model.spatial()) {
    cols.insert(cols.end(), {"sigma", "theta", "sigma2", "theta_over_sigma2"});
  }
  for (const auto& id : model.site_ids()) cols.push_back("psi[" + id + "]");
  if (model.spatial())
    for (const auto& id : model.site_ids()) cols.push_back("u[" + id + "]");
  return cols;
}

std::vector<std::string> monitored_parameters(const std::vector<std::string>& columns) {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    if ((c.rfind("beta", 0) == 0) || c == "p" || c == "sigma" || c == "theta") out.push_back(c);
  }
  return out;
}

PosteriorSummary summarize(const std::vector<DrawMatrix>& chains,
                           const std::vector<std::string>& monitored) {
  PosteriorSummary s;
  if (chains.empty()) return s;
  const auto& cols = chains.front().columns;
  for (const auto& ch : chains) s.retained_draws += static_cast<std::size_t>(ch.values.rows());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].rfind("u[", 0) == 0) continue;
    std::vector<std::vector<double>> per_chain;
    for (const auto& ch : chains) {
      std::vector<double> v(static_cast<std::size_t>(ch.values.rows()));
      for (Eigen::Index i = 0; i < ch.values.rows(); ++i)
        v[static_cast<std::size_t>(i)] = ch.values(i, static_cast<Eigen::Index>(j));
      per_chain.push_back(std::move(v));
    }
    ParameterSummary p;
    p.name = cols[j];
    const Moments m = pooled_moments(per_chain);
    p.mean = m.mean;
    p.sd = m.sd;
    p.q025 = m.q025;
    p.q975 = m.q975;
    p.rhat = rhat(per_chain);
    p.ess = ess(per_chain);
    p.monitored = std::find(monitored.begin(), monitored.end(), p.name) != monitored.end();
    s.parameters.push_back(std::move(p));
  }
  return s;
}

namespace {

ChainResult run_one_chain(const SamplerConfig& config, const OccupancyModel& model, int chain) {
  Rng rng = make_stream(config.seed ^ static_cast<std::uint64_t>(chain));
  ChainSampler sampler(model, config, initial_state(model, config, rng));
  AdaptState adapt = AdaptState::initial(sampler.n_hyper_coordinates());

  ChainResult result;
  result.draws.columns = draw_columns(model);
  const int retained = config.retained_per_chain();
  const auto n_cols = static_cast<Eigen::Index>(result.draws.columns.size());
  result.draws.values.resize(retained, n_cols);
  result.draws.iterations.reserve(static_cast<std::size_t>(retained));
  const auto k = static_cast<Eigen::Index>(model.n_coefficients());
  const auto n = static_cast<Eigen::Index>(model.n_sites());

  Eigen::Index row = 0;
  for (int it = 0; it < config.n_iterations; ++it) {
    const bool adapting = it < config.n_burnin;
    sampler.ess_update_u(rng);
    sampler.rwm_update_hyper(rng, adapt, adapting);
    if (it + 1 == config.n_burnin) result.step_sizes_at_burnin_end = adapt.step_sizes();
    if (adapting || (it - config.n_burnin) % config.thin != 0) continue;

    const ModelState& st = sampler.state();
    auto r = result.draws.values.row(row);
    Eigen::Index c = 0;
    for (Eigen::Index b = 0; b < k; ++b) r[c++] = st.beta[b];
    r[c++] = st.p;
    if (model.spatial()) {
      const double s2 = st.sigma * st.sigma;
      r[c++] = st.sigma;
      r[c++] = st.theta;
      r[c++] = s2;
      r[c++] = st.theta / s2;
    }
    const auto& eta = sampler.linear_predictor();
    for (Eigen::Index i = 0; i < n; ++i) r[c++] = inv_logit(eta[i]);
    if (model.spatial())
      for (Eigen::Index i = 0; i < n; ++i) r[c++] = st.u[i];
    result.draws.iterations.push_back(it);
    ++row;
  }
  if (result.step_sizes_at_burnin_end.empty()) result.step_sizes_at_burnin_end = adapt.step_sizes();
  result.step_sizes_final = adapt.step_sizes();
  for (std::size_t j = 0; j < adapt.total_proposed.size(); ++j) {
    result.acceptance_rates.push_back(
        adapt.total_proposed[j] ? static_cast<double>(adapt.total_accepted[j]) /
                                      static_cast<double>(adapt.total_proposed[j])
                                : 0.0);
  }
  result.incidents = sampler.incidents();
  return result;
}

}  // namespace

RunResult run_chains(const SamplerConfig& config, const OccupancyModel& model) {
  config.validate();
  const int n_chains = config.n_chains;
  std::vector<std::optional<ChainResult>> slots(static_cast<std::size_t>(n_chains));
  std::vector<std::string> errors(static_cast<std::size_t>(n_chains));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < n_chains; c = next++) {
      try {
        slots[static_cast<std::size_t>(c)] = run_one_chain(config, model, c);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(c)] = e.what();
      }
    }
  };
  const int n_workers = std::min(config.workers, n_chains);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunResult result;
  std::vector<std::string> failed;
  for (int c = 0; c < n_chains; ++c) {
    auto& slot = slots[static_cast<std::size_t>(c)];
    if (slot)
      result.chains.push_back(std::move(*slot));
    else
      failed.push_back("chain " + std::to_string(c) + ": " + errors[static_cast<std::size_t>(c)]);
  }
  if (result.chains.empty()) {
    std::string msg = "all chains failed";
    for (const auto& f : failed) msg += "\n  " + f;
    throw NumericError(msg);
  }
  std::vector<DrawMatrix> draws;
  for (const auto& ch : result.chains) draws.push_back(ch.draws);
  result.summary = summarize(draws, monitored_parameters(draws.front().columns));
  result.summary.failed_chains = std::move(failed);
  for (const auto& ch : result.chains) result.summary.incidents += ch.incidents;
  if (model.likelihood_enabled() && model.detections().sum() == 0)
    result.summary.warnings.push_back(
        "no detections in the data: p and psi are weakly identified");
  if (!result.summary.converged())
    result.summary.warnings.push_back("convergence thresholds (R-hat < 1.1, ESS > 100) not met");
  return result;
}

}  // namespace ssnocc
