#include "ssnocc/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "ssnocc/covariance.hpp"
#include "ssnocc/error.hpp"

namespace ssnocc {

void SimulationDesign::validate() const {
  if (n_sites < 2) throw ParameterError("n_sites must be at least 2");
  if (n_visits < 1) throw ParameterError("n_visits must be at least 1");
  if (n_replicates < 1) throw ParameterError("n_replicates must be at least 1");
  if (true_beta.empty()) throw ParameterError("true_beta needs an intercept");
  if (!(true_p > 0.0 && true_p <= 1.0)) throw ParameterError("true_p must lie in (0, 1]");
  if (!(true_sigma2 >= 0.0)) throw ParameterError("true_sigma2 must be nonnegative");
  if (!(true_theta > 0.0)) throw ParameterError("true_theta must be positive");
  if (!(mean_edge_length > 0.0)) throw ParameterError("mean_edge_length must be positive");
}

namespace {

std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  std::string digits = std::to_string(i);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

GeneratedNetwork generate_network(int n_sites, Rng& rng, double mean_edge_length) {
  if (n_sites < 2) throw ParameterError("generate_network: n_sites must be at least 2");
  std::exponential_distribution<double> edge_length(1.0 / mean_edge_length);
  auto draw_length = [&] { return std::max(edge_length(rng), 1e-6); };

  GeneratedNetwork g;
  auto& edges = g.network.edges;
  g.network.outlet_node = "n0";
  std::size_t next_node = 1;
  auto add_edge = [&](const std::string& downstream) {
    Edge e;
    e.edge_id = "e" + std::to_string(edges.size() + 1);
    e.upstream_node = "n" + std::to_string(next_node++);
    e.downstream_node = downstream;
    e.length = draw_length();
    edges.push_back(std::move(e));
    return edges.size() - 1;
  };

  std::vector<std::size_t> tips{add_edge("n0")};
  while (edges.size() < static_cast<std::size_t>(n_sites)) {
    const std::size_t pick =
        std::uniform_int_distribution<std::size_t>(0, tips.size() - 1)(rng);
    const std::size_t tip = tips[pick];
    tips.erase(tips.begin() + static_cast<std::ptrdiff_t>(pick));
    const int branches = std::uniform_int_distribution<int>(1, 2)(rng);
    const std::string junction = edges[tip].upstream_node;
    for (int b = 0; b < branches; ++b) tips.push_back(add_edge(junction));
  }

  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t width = std::to_string(n_sites).size();
  for (int i = 0; i < n_sites; ++i) {
    const Edge& e = edges[order[static_cast<std::size_t>(i)]];
    SitePlacement s;
    s.site_id = padded("s", static_cast<std::size_t>(i) + 1, std::max<std::size_t>(width, 3));
    s.edge_id = e.edge_id;
    s.dist_to_edge_downstream_node = uniform01(rng) * e.length;
    g.sites.push_back(std::move(s));
  }
  return g;
}

SimulatedData simulate_dataset(const SimulationDesign& design, const StreamNetwork& net,
                               const std::vector<SitePlacement>& sites, Rng& rng) {
  return simulate_dataset(design, distance_tables(net, sites), rng);
}

SimulatedData simulate_dataset(const SimulationDesign& design, const PairDistanceTable& dist,
                               Rng& rng) {
  const auto n = static_cast<Eigen::Index>(dist.size());
  const auto n_cov = static_cast<Eigen::Index>(design.true_beta.size()) - 1;
  SimulatedData out;
  Truth& t = out.truth;
  t.site_ids = dist.site_ids;
  for (Eigen::Index k = 0; k < n_cov; ++k) t.covariate_names.push_back("x" + std::to_string(k + 1));
  if (n_cov == 1) t.covariate_names = {"x"};

  t.covariates.resize(n, n_cov);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n_cov; ++k) t.covariates(i, k) = standard_normal(rng);

  const auto factor = cholesky_lower(tail_down_exp(dist, design.true_sigma2, design.true_theta).values);
  Eigen::VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i) u[i] = standard_normal(rng);
  t.tau = factor.lower.triangularView<Eigen::Lower>() * u;

  out.design.values.resize(n, n_cov + 1);
  out.design.values.col(0).setOnes();
  out.design.values.rightCols(n_cov) = t.covariates;
  out.design.covariate_names = t.covariate_names;
  const Eigen::Map<const Eigen::VectorXd> beta(design.true_beta.data(), n_cov + 1);
  const Eigen::VectorXd eta = out.design.values * beta + t.tau;
  t.psi = eta.unaryExpr([](double v) { return inv_logit(v); });

  t.z.resize(static_cast<std::size_t>(n));
  out.histories.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    t.z[si] = uniform01(rng) < t.psi[i] ? 1 : 0;
    auto& h = out.histories[si];
    h.site_id = dist.site_ids[si];
    h.visits.resize(static_cast<std::size_t>(design.n_visits));
    for (auto& v : h.visits) v = (t.z[si] == 1 && uniform01(rng) < design.true_p) ? 1 : 0;
  }
  return out;
}

BiasResult relative_bias(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw ParameterError("relative_bias: no estimates");
  const double mean =
      std::accumulate(estimates.begin(), estimates.end(), 0.0) / static_cast<double>(estimates.size());
  if (truth == 0.0) return {mean - truth, true};
  return {(mean - truth) / truth, false};
}

double rmspe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  if (predicted.size() != truth.size() || predicted.size() == 0)
    throw ParameterError("rmspe: size mismatch");
  return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(predicted.size()));
}

std::uint64_t replicate_sampler_seed(std::uint64_t base, int replicate) {
  // splitmix64 finalizer on (base, replicate)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(replicate) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ModelEstimates fit_and_score(const SimulatedData& data, const PairDistanceTable& dist,
                             SpatialStructure structure, const SimulationDesign& design,
                             SamplerConfig sampler) {
  ModelEstimates est;
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    const bool spatial = structure == SpatialStructure::TailDown;
    OccupancyModel model(data.design, data.histories,
                         spatial ? std::optional<PairDistanceTable>(dist) : std::nullopt,
                         Priors::for_max_distance(dist.max_distance()), structure);
    const RunResult run = run_chains(sampler, model);
    const auto& s = run.summary;
    for (std::size_t k = 0; k < model.n_coefficients(); ++k) {
      const auto& b = s.get("beta" + std::to_string(k));
      est.beta.push_back(b.mean);
      const double truth = design.true_beta[k];
      est.beta_covered.push_back(b.q025 <= truth && truth <= b.q975);
    }
    const auto& p = s.get("p");
    est.p = p.mean;
    est.p_covered = p.q025 <= design.true_p && design.true_p <= p.q975;
    if (spatial) {
      est.sigma2 = s.get("sigma2").mean;
      est.theta = s.get("theta").mean;
      est.theta_over_sigma2 = s.get("theta_over_sigma2").mean;
    } else {
      est.sigma2 = est.theta = est.theta_over_sigma2 = nan;
    }
    Eigen::VectorXd psi_hat(static_cast<Eigen::Index>(model.n_sites()));
    for (std::size_t i = 0; i < model.n_sites(); ++i)
      psi_hat[static_cast<Eigen::Index>(i)] = s.get("psi[" + model.site_ids()[i] + "]").mean;
    est.squared_error_sum = (psi_hat - data.truth.psi).squaredNorm();
    est.n_sites = model.n_sites();
    est.rmspe = rmspe(psi_hat, data.truth.psi);
    est.converged = s.converged();
    est.max_rhat = 0.0;
    est.min_ess = std::numeric_limits<double>::infinity();
    for (const auto& par : s.parameters) {
      if (!par.monitored) continue;
      est.max_rhat = std::max(est.max_rhat, par.rhat.value);
      est.min_ess = std::min(est.min_ess, par.ess.value);
    }
  } catch (const std::exception& e) {
    est.failed = true;
    est.error = e.what();
  }
  return est;
}

SimulatedReplicate simulate_replicate(const SimulationDesign& design, int replicate) {
  design.validate();
  Rng net_rng = make_stream(design.network_seed, {static_cast<std::uint64_t>(replicate)});
  Rng data_rng = make_stream(design.data_seed, {static_cast<std::uint64_t>(replicate)});
  SimulatedReplicate r;
  r.generated = generate_network(design.n_sites, net_rng, design.mean_edge_length);
  r.data = simulate_dataset(design, r.generated.network, r.generated.sites, data_rng);
  return r;
}

ReplicateReport run_replicate(const SimulationDesign& design, const SamplerConfig& sampler,
                              int replicate, bool fit_nonspatial) {
  Rng net_rng = make_stream(design.network_seed, {static_cast<std::uint64_t>(replicate)});
  Rng data_rng = make_stream(design.data_seed, {static_cast<std::uint64_t>(replicate)});
  const GeneratedNetwork g = generate_network(design.n_sites, net_rng, design.mean_edge_length);
  const PairDistanceTable dist = distance_tables(g.network, g.sites);
  const SimulatedData data = simulate_dataset(design, dist, data_rng);

  ReplicateReport rep;
  rep.replicate_id = replicate;
  rep.sampler_seed = replicate_sampler_seed(sampler.seed, replicate);
  SamplerConfig cfg = sampler;
  cfg.seed = rep.sampler_seed;
  cfg.workers = 1;
  rep.spatial = fit_and_score(data, dist, SpatialStructure::TailDown, design, cfg);
  if (fit_nonspatial)
    rep.nonspatial = fit_and_score(data, dist, SpatialStructure::NonSpatial, design, cfg);
  else
    rep.nonspatial.failed = true;
  return rep;
}

ModelAggregate aggregate(const std::vector<ReplicateReport>& reps, const SimulationDesign& design,
                         bool spatial, bool converged_only) {
  ModelAggregate agg;
  std::vector<std::vector<double>> beta(design.true_beta.size());
  std::vector<double> p, sigma2, theta, ratio;
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& r : reps) {
    const ModelEstimates& e = spatial ? r.spatial : r.nonspatial;
    if (e.failed || (converged_only && !e.converged)) continue;
    agg.n_replicates++;
    for (std::size_t k = 0; k < beta.size() && k < e.beta.size(); ++k) beta[k].push_back(e.beta[k]);
    p.push_back(e.p);
    sigma2.push_back(e.sigma2);
    theta.push_back(e.theta);
    ratio.push_back(e.theta_over_sigma2);
    sq += e.squared_error_sum;
    count += e.n_sites;
  }
  if (agg.n_replicates == 0) {
    agg.rmspe = std::numeric_limits<double>::quiet_NaN();
    return agg;
  }
  for (std::size_t k = 0; k < beta.size(); ++k)
    agg.bias.emplace_back("beta" + std::to_string(k), relative_bias(beta[k], design.true_beta[k]));
  agg.bias.emplace_back("p", relative_bias(p, design.true_p));
  if (spatial) {
    agg.bias.emplace_back("sigma2", relative_bias(sigma2, design.true_sigma2));
    agg.bias.emplace_back("theta", relative_bias(theta, design.true_theta));
    agg.bias.emplace_back("theta_over_sigma2",
                          relative_bias(ratio, design.true_theta_over_sigma2()));
  }
  agg.rmspe = std::sqrt(sq / static_cast<double>(count));
  return agg;
}

StudyReport run_study(const SimulationDesign& design, const SamplerConfig& sampler,
                      const StudyOptions& options) {
  design.validate();
  sampler.validate();
  StudyReport report;
  report.design = design;
  report.sampler = sampler;
  report.replicates.resize(static_cast<std::size_t>(design.n_replicates));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < design.n_replicates; r = next++) {
      ReplicateReport rep;
      try {
        rep = run_replicate(design, sampler, r + 1, options.fit_nonspatial);
      } catch (const std::exception& e) {
        rep.replicate_id = r + 1;
        rep.spatial.failed = rep.nonspatial.failed = true;
        rep.spatial.error = rep.nonspatial.error = e.what();
      }
      report.replicates[static_cast<std::size_t>(r)] = std::move(rep);
    }
  };
  const int n_workers = std::max(1, std::min(options.workers, design.n_replicates));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  report.spatial_all = aggregate(report.replicates, design, true, false);
  report.spatial_converged = aggregate(report.replicates, design, true, true);
  if (options.fit_nonspatial) {
    report.nonspatial_all = aggregate(report.replicates, design, false, false);
    report.nonspatial_converged = aggregate(report.replicates, design, false, true);
  }
  return report;
}

}  // namespace ssnocc
