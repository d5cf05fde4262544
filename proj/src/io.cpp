#include "ssnocc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>

#include "ssnocc/csv.hpp"
#include "ssnocc/diagnostics.hpp"
#include "ssnocc/error.hpp"

namespace ssnocc {

using nlohmann::json;

namespace {

constexpr int kExactDigits = 17;
constexpr int kReportDigits = 6;

std::ofstream open_for_write(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

std::string exact(double v) { return format_double(v, kExactDigits); }
std::string report(double v) { return format_double(v, kReportDigits); }

std::string join(const std::vector<std::string>& items, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

StreamNetwork read_network_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const auto c_id = t.require("edge_id", src);
  const auto c_up = t.require("upstream_node", src);
  const auto c_down = t.require("downstream_node", src);
  const auto c_len = t.require("length_km", src);
  const auto c_add = t.find("additive_value");
  StreamNetwork net;
  for (const auto& row : t.rows) {
    Edge e;
    e.edge_id = row[c_id];
    e.upstream_node = row[c_up];
    e.downstream_node = row[c_down];
    e.length = parse_double(row[c_len], "length_km of edge '" + e.edge_id + "'");
    if (c_add != CsvTable::npos && !row[c_add].empty())
      e.additive_value = parse_double(row[c_add], "additive_value of edge '" + e.edge_id + "'");
    net.edges.push_back(std::move(e));
  }
  net.outlet_node = infer_outlet(net.edges);
  return net;
}

void write_network_csv(const fs::path& path, const StreamNetwork& net) {
  auto out = open_for_write(path);
  out << "edge_id,upstream_node,downstream_node,length_km,additive_value\n";
  for (const auto& e : net.edges) {
    const std::vector<std::string> row{e.edge_id, e.upstream_node, e.downstream_node,
                                       exact(e.length), exact(e.additive_value)};
    write_csv_row(out, row);
  }
  finish(out, path);
}

SiteTable read_sites_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const auto c_id = t.require("site_id", src);
  const auto c_edge = t.require("edge_id", src);
  const auto c_dist = t.require("dist_to_downstream_km", src);
  const auto c_x = t.find("x");
  const auto c_y = t.find("y");
  const bool has_xy = c_x != CsvTable::npos && c_y != CsvTable::npos;
  SiteTable st;
  if (has_xy) st.coords.emplace();
  for (const auto& row : t.rows) {
    SitePlacement s;
    s.site_id = row[c_id];
    s.edge_id = row[c_edge];
    s.dist_to_edge_downstream_node =
        parse_double(row[c_dist], "dist_to_downstream_km of site '" + s.site_id + "'");
    if (has_xy) {
      st.coords->x.push_back(parse_double(row[c_x], "x of site '" + s.site_id + "'"));
      st.coords->y.push_back(parse_double(row[c_y], "y of site '" + s.site_id + "'"));
    }
    st.sites.push_back(std::move(s));
  }
  return st;
}

void write_sites_csv(const fs::path& path, const std::vector<SitePlacement>& sites) {
  auto out = open_for_write(path);
  out << "site_id,edge_id,dist_to_downstream_km\n";
  for (const auto& s : sites) {
    const std::vector<std::string> row{s.site_id, s.edge_id, exact(s.dist_to_edge_downstream_node)};
    write_csv_row(out, row);
  }
  finish(out, path);
}

std::vector<DetectionHistory> read_detections_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const auto c_id = t.require("site_id", src);
  const auto c_visit = t.require("visit", src);
  const auto c_det = t.require("detected", src);
  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<long, std::uint8_t>> visits;
  for (const auto& row : t.rows) {
    const std::string& id = row[c_id];
    const long visit = parse_long(row[c_visit], "visit of site '" + id + "'");
    const long det = parse_long(row[c_det], "detected of site '" + id + "'");
    if (det != 0 && det != 1)
      throw DataError(src + ": detected must be 0 or 1 (site '" + id + "')");
    auto [it, inserted] = visits.try_emplace(id);
    if (inserted) order.push_back(id);
    if (!it->second.emplace(visit, static_cast<std::uint8_t>(det)).second)
      throw DataError(src + ": duplicate visit " + std::to_string(visit) + " for site '" + id + "'");
  }
  std::vector<DetectionHistory> out;
  for (const auto& id : order) {
    DetectionHistory h;
    h.site_id = id;
    for (const auto& [v, d] : visits[id]) h.visits.push_back(d);
    out.push_back(std::move(h));
  }
  return out;
}

void write_detections_csv(const fs::path& path, const std::vector<DetectionHistory>& histories) {
  auto out = open_for_write(path);
  out << "site_id,visit,detected\n";
  for (const auto& h : histories) {
    for (std::size_t j = 0; j < h.visits.size(); ++j) {
      const std::vector<std::string> row{h.site_id, std::to_string(j + 1),
                                         std::to_string(static_cast<int>(h.visits[j]))};
      write_csv_row(out, row);
    }
  }
  finish(out, path);
}

CovariateTable read_covariates_csv(const fs::path& path, const std::vector<std::string>& columns) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const auto c_id = t.require("site_id", src);
  std::vector<std::size_t> idx;
  CovariateTable ct;
  if (columns.empty()) {
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (c == c_id) continue;
      idx.push_back(c);
      ct.names.push_back(t.header[c]);
    }
  } else {
    for (const auto& name : columns) {
      idx.push_back(t.require(name, src));
      ct.names.push_back(name);
    }
  }
  ct.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(idx.size()));
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (!seen.insert(row[c_id]).second)
      throw DataError(src + ": duplicate site_id '" + row[c_id] + "'");
    ct.site_ids.push_back(row[c_id]);
    for (std::size_t k = 0; k < idx.size(); ++k)
      ct.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          parse_double(row[idx[k]], ct.names[k] + " of site '" + row[c_id] + "'");
  }
  return ct;
}

void write_truth_csv(const fs::path& path, const Truth& truth) {
  auto out = open_for_write(path);
  std::vector<std::string> header{"site_id"};
  header.insert(header.end(), truth.covariate_names.begin(), truth.covariate_names.end());
  header.insert(header.end(), {"tau", "psi", "z"});
  write_csv_row(out, header);
  for (std::size_t i = 0; i < truth.site_ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    std::vector<std::string> row{truth.site_ids[i]};
    for (Eigen::Index k = 0; k < truth.covariates.cols(); ++k) row.push_back(exact(truth.covariates(r, k)));
    row.push_back(exact(truth.tau[r]));
    row.push_back(exact(truth.psi[r]));
    row.push_back(std::to_string(truth.z[i]));
    write_csv_row(out, row);
  }
  finish(out, path);
}

namespace {

Eigen::MatrixXd covariate_rows(const std::vector<std::string>& site_order,
                               const CovariateTable& cov) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < cov.site_ids.size(); ++i)
    row_of.emplace(cov.site_ids[i], static_cast<Eigen::Index>(i));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(site_order.size()), cov.values.cols());
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < site_order.size(); ++i) {
    const auto it = row_of.find(site_order[i]);
    if (it == row_of.end()) {
      missing.push_back(site_order[i]);
      continue;
    }
    m.row(static_cast<Eigen::Index>(i)) = cov.values.row(it->second);
  }
  if (!missing.empty()) throw DataError("sites without covariates: " + join(missing));
  return m;
}

}  // namespace

DesignMatrix build_design(const std::vector<std::string>& site_order,
                          const CovariateTable* covariates, bool standardize,
                          Standardization& transform) {
  transform = {};
  if (!covariates || covariates->names.empty()) {
    return DesignMatrix::intercept_only(site_order.size());
  }
  Eigen::MatrixXd raw = covariate_rows(site_order, *covariates);
  const auto n = raw.rows();
  transform.applied = standardize;
  for (Eigen::Index k = 0; k < raw.cols(); ++k) {
    double center = 0.0;
    double scale = 1.0;
    if (standardize) {
      center = raw.col(k).mean();
      if (n > 1) {
        const double sd = std::sqrt((raw.col(k).array() - center).square().sum() /
                                    static_cast<double>(n - 1));
        if (sd > 0.0) scale = sd;
      }
    }
    transform.center.push_back(center);
    transform.scale.push_back(scale);
  }
  return apply_design(site_order, covariates, covariates->names, transform);
}

DesignMatrix apply_design(const std::vector<std::string>& site_order,
                          const CovariateTable* covariates, const std::vector<std::string>& names,
                          const Standardization& transform) {
  if (names.empty()) return DesignMatrix::intercept_only(site_order.size());
  if (!covariates) throw DataError("covariates required for: " + join(names));
  CovariateTable selected;
  selected.site_ids = covariates->site_ids;
  selected.names = names;
  selected.values.resize(covariates->values.rows(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto it = std::find(covariates->names.begin(), covariates->names.end(), names[k]);
    if (it == covariates->names.end()) throw DataError("missing covariate column '" + names[k] + "'");
    selected.values.col(static_cast<Eigen::Index>(k)) =
        covariates->values.col(it - covariates->names.begin());
  }
  const Eigen::MatrixXd raw = covariate_rows(site_order, selected);
  DesignMatrix x;
  x.covariate_names = names;
  x.values.resize(raw.rows(), raw.cols() + 1);
  x.values.col(0).setOnes();
  for (Eigen::Index k = 0; k < raw.cols(); ++k) {
    const double c = transform.center.empty() ? 0.0 : transform.center[static_cast<std::size_t>(k)];
    const double s = transform.scale.empty() ? 1.0 : transform.scale[static_cast<std::size_t>(k)];
    x.values.col(k + 1) = (raw.col(k).array() - c) / s;
  }
  x.validate();
  return x;
}

Dataset load_dataset(const DatasetPaths& paths, const std::vector<std::string>& covariate_columns) {
  Dataset d;
  d.paths = paths;
  d.network = read_network_csv(paths.network);
  const NetworkIndex index(d.network);
  d.sites = read_sites_csv(paths.sites);
  std::set<std::string> site_set;
  for (const auto& s : d.sites.sites) {
    if (!site_set.insert(s.site_id).second)
      throw DataError(paths.sites.string() + ": duplicate site_id '" + s.site_id + "'");
    index.check_placement(s);
  }

  auto histories = read_detections_csv(paths.detections);
  std::unordered_map<std::string, std::size_t> hist_of;
  std::vector<std::string> unknown;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    hist_of.emplace(histories[i].site_id, i);
    if (!site_set.count(histories[i].site_id)) unknown.push_back(histories[i].site_id);
  }
  std::vector<std::string> without;
  for (const auto& s : d.sites.sites)
    if (!hist_of.count(s.site_id)) without.push_back(s.site_id);
  if (!unknown.empty() || !without.empty()) {
    std::string msg = "site mismatch between sites and detections files";
    if (!unknown.empty()) msg += "; detections reference unknown sites: " + join(unknown);
    if (!without.empty()) msg += "; sites without detections: " + join(without);
    throw DataError(msg);
  }
  for (const auto& s : d.sites.sites) d.histories.push_back(std::move(histories[hist_of[s.site_id]]));

  if (paths.covariates) {
    d.covariates = read_covariates_csv(*paths.covariates, covariate_columns);
    std::vector<std::string> extra;
    std::set<std::string> cov_set(d.covariates->site_ids.begin(), d.covariates->site_ids.end());
    for (const auto& id : d.covariates->site_ids)
      if (!site_set.count(id)) extra.push_back(id);
    std::vector<std::string> missing;
    for (const auto& s : d.sites.sites)
      if (!cov_set.count(s.site_id)) missing.push_back(s.site_id);
    if (!extra.empty() || !missing.empty()) {
      std::string msg = "site mismatch between sites and covariates files";
      if (!extra.empty()) msg += "; covariates reference unknown sites: " + join(extra);
      if (!missing.empty()) msg += "; sites without covariates: " + join(missing);
      throw DataError(msg);
    }
  } else if (!covariate_columns.empty()) {
    throw DataError("covariate columns requested but no covariates file given");
  }
  return d;
}

FitResult fit_dataset(const Dataset& data, const FitOptions& options) {
  options.sampler.validate();
  FitResult fit;
  fit.options = options;
  fit.paths = data.paths;
  for (const auto& s : data.sites.sites) fit.site_ids.push_back(s.site_id);
  const CovariateTable* cov = data.covariates ? &*data.covariates : nullptr;
  DesignMatrix x = build_design(fit.site_ids, cov, options.standardize, fit.standardization);
  fit.covariate_names = x.covariate_names;

  std::optional<PairDistanceTable> dist;
  if (options.structure == SpatialStructure::TailDown) {
    dist = distance_tables(data.network, data.sites.sites);
    fit.max_distance = dist->max_distance();
    fit.priors = Priors::for_max_distance(fit.max_distance);
  }
  OccupancyModel model(std::move(x), data.histories, std::move(dist), fit.priors,
                       options.structure);
  fit.run = run_chains(options.sampler, model);
  return fit;
}

void write_draws_csv(const fs::path& path, const std::vector<DrawMatrix>& chains) {
  if (chains.empty()) throw ParameterError("no chains to write");
  auto out = open_for_write(path);
  std::vector<std::string> header{"chain", "iteration"};
  header.insert(header.end(), chains.front().columns.begin(), chains.front().columns.end());
  write_csv_row(out, header);
  std::string line;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& ch = chains[c];
    for (Eigen::Index i = 0; i < ch.values.rows(); ++i) {
      line = std::to_string(c);
      line += ',';
      line += std::to_string(ch.iterations[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < ch.values.cols(); ++j) {
        line += ',';
        line += exact(ch.values(i, j));
      }
      line += '\n';
      out << line;
    }
  }
  finish(out, path);
}

std::vector<DrawMatrix> read_draws_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const auto c_chain = t.require("chain", src);
  const auto c_iter = t.require("iteration", src);
  std::vector<std::size_t> params;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == c_chain || c == c_iter) continue;
    params.push_back(c);
    names.push_back(t.header[c]);
  }
  std::map<long, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    rows_of[parse_long(t.rows[r][c_chain], "chain")].push_back(r);
  std::vector<DrawMatrix> chains;
  for (const auto& [chain, rows] : rows_of) {
    DrawMatrix d;
    d.columns = names;
    d.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = t.rows[rows[i]];
      d.iterations.push_back(static_cast<int>(parse_long(row[c_iter], "iteration")));
      for (std::size_t k = 0; k < params.size(); ++k)
        d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            parse_double(row[params[k]], names[k]);
    }
    chains.push_back(std::move(d));
  }
  return chains;
}

std::string format_estimate(double mean, double lower, double upper) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.2f (%.2f, %.2f)", mean, lower, upper);
  return buf;
}

json sampler_json(const SamplerConfig& c) {
  json j{{"n_chains", c.n_chains},         {"n_iterations", c.n_iterations},
         {"n_burnin", c.n_burnin},         {"thin", c.thin},
         {"seed", c.seed},                 {"adapt_window", c.adapt_window},
         {"target_accept", c.target_accept}, {"workers", c.workers}};
  if (c.fixed_sigma) j["fixed_sigma"] = *c.fixed_sigma;
  if (c.fixed_theta) j["fixed_theta"] = *c.fixed_theta;
  return j;
}

namespace {

json priors_json(const FitResult& fit) {
  json j{{"beta", "normal(0, " + format_double(fit.priors.beta_sd, 6) + ")"},
         {"p", "uniform(0, 1)"}};
  if (fit.options.structure == SpatialStructure::TailDown) {
    j["sigma"] = {{"law", "uniform"}, {"lower", 0.0}, {"upper", fit.priors.sigma_max}};
    j["theta"] = {{"law", "uniform"},
                  {"lower", fit.priors.theta_min},
                  {"upper", fit.priors.theta_max},
                  {"rule", "U(0.01 D, 2 D), D = max pairwise stream distance"},
                  {"max_stream_distance_km", fit.max_distance}};
  }
  return j;
}

json incidents_json(const Incidents& inc) {
  return {{"bracket_collapses", inc.bracket_collapses},
          {"factorization_failures", inc.factorization_failures},
          {"evaluation_errors", inc.evaluation_errors},
          {"jitter_histogram",
           {{"none", inc.jitter_histogram[0]},
            {"1e-10", inc.jitter_histogram[1]},
            {"1e-8", inc.jitter_histogram[2]},
            {"1e-6", inc.jitter_histogram[3]}}}};
}

const char* structure_name(SpatialStructure s) {
  return s == SpatialStructure::TailDown ? "taildown" : "nonspatial";
}

}  // namespace

json summary_json(const FitResult& fit) {
  const auto& s = fit.run.summary;
  json params = json::array();
  for (const auto& p : s.parameters) {
    params.push_back({{"name", p.name},
                      {"mean", p.mean},
                      {"sd", p.sd},
                      {"q2.5", p.q025},
                      {"q97.5", p.q975},
                      {"rhat", finite_or_null(p.rhat.value)},
                      {"rhat_flag", p.rhat.flagged},
                      {"ess", finite_or_null(p.ess.value)},
                      {"ess_flag", p.ess.flagged},
                      {"monitored", p.monitored},
                      {"estimate", format_estimate(p.mean, p.q025, p.q975)}});
  }
  json chains = json::array();
  for (const auto& ch : fit.run.chains) {
    chains.push_back({{"retained_draws", ch.draws.values.rows()},
                      {"step_sizes_at_burnin_end", ch.step_sizes_at_burnin_end},
                      {"step_sizes_final", ch.step_sizes_final},
                      {"acceptance_rates", ch.acceptance_rates}});
  }
  json inputs{{"network", fs::absolute(fit.paths.network).string()},
              {"sites", fs::absolute(fit.paths.sites).string()},
              {"detections", fs::absolute(fit.paths.detections).string()}};
  inputs["covariates"] =
      fit.paths.covariates ? json(fs::absolute(*fit.paths.covariates).string()) : json(nullptr);
  return {{"schema", "ssnocc-summary-v1"},
          {"version", kVersion},
          {"model", structure_name(fit.options.structure)},
          {"sampler", sampler_json(fit.options.sampler)},
          {"priors", priors_json(fit)},
          {"covariates",
           {{"names", fit.covariate_names},
            {"standardized", fit.standardization.applied},
            {"center", fit.standardization.center},
            {"scale", fit.standardization.scale}}},
          {"inputs", inputs},
          {"sites", fit.site_ids},
          {"retained_draws", s.retained_draws},
          {"converged", s.converged()},
          {"convergence_rule", "R-hat < 1.1 and ESS > 100 for beta, p, sigma, theta"},
          {"parameters", params},
          {"chains", chains},
          {"incidents", incidents_json(s.incidents)},
          {"failed_chains", s.failed_chains},
          {"warnings", s.warnings}};
}

void ensure_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "'");
  const fs::path probe = dir / ".ssnocc_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

void write_fit_outputs(const FitResult& fit, const fs::path& dir) {
  ensure_output_dir(dir);
  std::vector<DrawMatrix> draws;
  for (const auto& ch : fit.run.chains) draws.push_back(ch.draws);
  write_draws_csv(dir / "draws.csv", draws);
  const fs::path summary = dir / "summary.json";
  auto out = open_for_write(summary);
  out << summary_json(fit).dump(2) << '\n';
  finish(out, summary);
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

SitePrediction summarize_site(const std::string& id, bool observed,
                              const std::vector<std::vector<double>>& per_chain) {
  const Moments m = pooled_moments(per_chain);
  return {id, observed, m.mean, m.q025, m.q975};
}

}  // namespace

std::vector<SitePrediction> predict(const PredictOptions& options) {
  if (options.thin < 1) throw ParameterError("thin must be at least 1");
  const json summary = read_json(options.fit_dir / "summary.json");
  const fs::path draws_path = options.fit_dir / "draws.csv";
  if (!fs::exists(draws_path)) throw DataError("missing draws file '" + draws_path.string() + "'");
  const auto chains = read_draws_csv(draws_path);

  // Retained positions thin-1, 2 thin-1, ... within each chain.
  std::vector<std::vector<Eigen::Index>> keep(chains.size());
  std::size_t total = 0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (Eigen::Index i = options.thin - 1; i < chains[c].values.rows(); i += options.thin)
      keep[c].push_back(i);
    total += keep[c].size();
  }
  if (total == 0) throw ParameterError("no posterior draws retained after thinning by " +
                                       std::to_string(options.thin));

  const auto site_ids = summary.at("sites").get<std::vector<std::string>>();
  std::vector<SitePrediction> out;
  for (const auto& id : site_ids) {
    const std::size_t col = chains.front().column_index("psi[" + id + "]");
    std::vector<std::vector<double>> per_chain(chains.size());
    for (std::size_t c = 0; c < chains.size(); ++c)
      for (Eigen::Index i : keep[c])
        per_chain[c].push_back(chains[c].values(i, static_cast<Eigen::Index>(col)));
    out.push_back(summarize_site(id, true, per_chain));
  }
  if (!options.new_sites) return out;

  const auto& inputs = summary.at("inputs");
  const fs::path net_path = options.network.value_or(fs::path(inputs.at("network").get<std::string>()));
  const fs::path sites_path = options.sites.value_or(fs::path(inputs.at("sites").get<std::string>()));
  const StreamNetwork net = read_network_csv(net_path);
  const NetworkIndex index(net);
  const SiteTable observed = read_sites_csv(sites_path);
  const SiteTable fresh = read_sites_csv(*options.new_sites);
  std::set<std::string> taken(site_ids.begin(), site_ids.end());
  std::vector<std::string> new_ids;
  for (const auto& s : fresh.sites) {
    if (taken.count(s.site_id))
      throw DataError("new site id '" + s.site_id + "' duplicates an existing site");
    taken.insert(s.site_id);
    index.check_placement(s);
    new_ids.push_back(s.site_id);
  }
  if (new_ids.empty()) return out;

  const auto& cov = summary.at("covariates");
  const auto names = cov.at("names").get<std::vector<std::string>>();
  Standardization transform;
  transform.applied = cov.at("standardized").get<bool>();
  transform.center = cov.at("center").get<std::vector<double>>();
  transform.scale = cov.at("scale").get<std::vector<double>>();
  std::optional<CovariateTable> new_cov;
  if (!names.empty()) {
    if (!options.new_covariates)
      throw DataError("model has covariates: a covariates file for the new sites is required");
    new_cov = read_covariates_csv(*options.new_covariates, names);
  }
  const DesignMatrix x_new = apply_design(new_ids, new_cov ? &*new_cov : nullptr, names, transform);

  const bool spatial = summary.at("model").get<std::string>() == "taildown";
  const auto n_obs = static_cast<Eigen::Index>(site_ids.size());
  const auto n_new = static_cast<Eigen::Index>(new_ids.size());
  const auto n_coef = x_new.values.cols();
  const auto& cols = chains.front().columns;
  std::vector<Eigen::Index> beta_col;
  for (Eigen::Index k = 0; k < n_coef; ++k)
    beta_col.push_back(static_cast<Eigen::Index>(chains.front().column_index("beta" + std::to_string(k))));

  std::optional<PairDistanceTable> joint;
  std::vector<Eigen::Index> u_col;
  Eigen::Index sigma_col = 0;
  Eigen::Index theta_col = 0;
  if (spatial) {
    // Observed sites first, in fit order, then the new sites.
    std::unordered_map<std::string, const SitePlacement*> placed;
    for (const auto& s : observed.sites) placed.emplace(s.site_id, &s);
    std::vector<SitePlacement> all;
    for (const auto& id : site_ids) {
      const auto it = placed.find(id);
      if (it == placed.end()) throw DataError("fit site '" + id + "' missing from sites file");
      all.push_back(*it->second);
    }
    all.insert(all.end(), fresh.sites.begin(), fresh.sites.end());
    joint = distance_tables(index, all);
    for (const auto& id : site_ids)
      u_col.push_back(static_cast<Eigen::Index>(chains.front().column_index("u[" + id + "]")));
    sigma_col = static_cast<Eigen::Index>(chains.front().column_index("sigma"));
    theta_col = static_cast<Eigen::Index>(chains.front().column_index("theta"));
  }
  (void)cols;

  Rng rng = make_stream(options.seed, {0x70726564ULL});
  std::vector<std::vector<std::vector<double>>> psi(
      static_cast<std::size_t>(n_new), std::vector<std::vector<double>>(chains.size()));
  Eigen::MatrixXd corr;
  LowerTriangularFactor factor;
  double factored_theta = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd beta(n_coef);
  Eigen::VectorXd u(n_obs);
  Eigen::VectorXd w(n_new);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& v = chains[c].values;
    for (Eigen::Index i : keep[c]) {
      for (Eigen::Index k = 0; k < n_coef; ++k) beta[k] = v(i, beta_col[static_cast<std::size_t>(k)]);
      Eigen::VectorXd eta = x_new.values * beta;
      if (spatial) {
        const double sigma = v(i, sigma_col);
        const double theta = v(i, theta_col);
        if (theta != factored_theta) {
          tail_down_correlation(*joint, theta, corr);
          factor = cholesky_lower(corr);
          factored_theta = theta;
        }
        for (Eigen::Index k = 0; k < n_obs; ++k) u[k] = v(i, u_col[static_cast<std::size_t>(k)]);
        for (Eigen::Index k = 0; k < n_new; ++k) w[k] = standard_normal(rng);
        const auto& l = factor.lower;
        const Eigen::VectorXd tau =
            l.block(n_obs, 0, n_new, n_obs) * u +
            l.block(n_obs, n_obs, n_new, n_new).triangularView<Eigen::Lower>() * w;
        eta += sigma * tau;
      }
      for (Eigen::Index k = 0; k < n_new; ++k)
        psi[static_cast<std::size_t>(k)][c].push_back(inv_logit(eta[k]));
    }
  }
  for (Eigen::Index k = 0; k < n_new; ++k)
    out.push_back(summarize_site(new_ids[static_cast<std::size_t>(k)], false,
                                 psi[static_cast<std::size_t>(k)]));
  return out;
}

void write_predictions_csv(const fs::path& path, const std::vector<SitePrediction>& preds) {
  auto out = open_for_write(path);
  out << "site_id,observed,psi_mean,psi_q2.5,psi_q97.5\n";
  for (const auto& p : preds) {
    const std::vector<std::string> row{p.site_id, p.observed ? "1" : "0", exact(p.mean),
                                       exact(p.q025), exact(p.q975)};
    write_csv_row(out, row);
  }
  finish(out, path);
}

DiagnoseResult diagnose_draws(const std::vector<DrawMatrix>& chains, double rhat_max,
                              double ess_min) {
  if (chains.empty()) throw DataError("no draws to diagnose");
  const std::size_t n = static_cast<std::size_t>(chains.front().values.rows());
  for (const auto& ch : chains)
    if (static_cast<std::size_t>(ch.values.rows()) != n)
      throw DataError("chains have unequal numbers of draws");
  DiagnoseResult r;
  for (const auto& name : monitored_parameters(chains.front().columns)) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& ch : chains) per_chain.push_back(ch.column(name));
    ParameterSummary p;
    p.name = name;
    p.monitored = true;
    const Moments m = pooled_moments(per_chain);
    p.mean = m.mean;
    p.sd = m.sd;
    p.q025 = m.q025;
    p.q975 = m.q975;
    p.rhat = rhat(per_chain);
    p.ess = ess(per_chain);
    if (!(p.rhat.value < rhat_max) || !(p.ess.value > ess_min)) r.pass = false;
    r.table.push_back(std::move(p));
  }
  return r;
}

void write_diagnostics(const fs::path& dir, const std::vector<DrawMatrix>& chains,
                       const DiagnoseResult& result) {
  ensure_output_dir(dir);
  {
    const fs::path path = dir / "diagnostics.csv";
    auto out = open_for_write(path);
    out << "parameter,rhat,ess,mean,sd,q2.5,q97.5\n";
    for (const auto& p : result.table) {
      const std::vector<std::string> row{p.name,        report(p.rhat.value), report(p.ess.value),
                                         report(p.mean), report(p.sd),        report(p.q025),
                                         report(p.q975)};
      write_csv_row(out, row);
    }
    finish(out, path);
  }
  {
    const fs::path path = dir / "traces.csv";
    auto out = open_for_write(path);
    out << "parameter,chain,iteration,value\n";
    for (const auto& p : result.table) {
      for (std::size_t c = 0; c < chains.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(chains[c].column_index(p.name));
        for (Eigen::Index i = 0; i < chains[c].values.rows(); ++i) {
          const std::vector<std::string> row{p.name, std::to_string(c),
                                             std::to_string(chains[c].iterations[static_cast<std::size_t>(i)]),
                                             report(chains[c].values(i, col))};
          write_csv_row(out, row);
        }
      }
    }
    finish(out, path);
  }
  {
    // Gaussian kernel density per chain, Silverman bandwidth, 128 points.
    const fs::path path = dir / "densities.csv";
    auto out = open_for_write(path);
    out << "parameter,chain,x,density\n";
    for (const auto& p : result.table) {
      for (std::size_t c = 0; c < chains.size(); ++c) {
        std::vector<double> v = chains[c].column(p.name);
        if (v.size() < 2) continue;
        std::sort(v.begin(), v.end());
        const double nn = static_cast<double>(v.size());
        const double mu = std::accumulate(v.begin(), v.end(), 0.0) / nn;
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        const double sd = std::sqrt(ss / (nn - 1.0));
        const double iqr = quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
        double spread = std::min(sd, iqr / 1.34);
        if (!(spread > 0.0)) spread = sd;
        const double bw = 0.9 * spread * std::pow(nn, -0.2);
        if (!(bw > 0.0)) continue;
        const double lo = v.front() - 3.0 * bw;
        const double hi = v.back() + 3.0 * bw;
        constexpr int kPoints = 128;
        const double norm = 1.0 / (nn * bw * std::sqrt(2.0 * 3.14159265358979323846));
        for (int g = 0; g < kPoints; ++g) {
          const double x = lo + (hi - lo) * g / (kPoints - 1);
          double dens = 0.0;
          for (double s : v) {
            const double z = (x - s) / bw;
            dens += std::exp(-0.5 * z * z);
          }
          const std::vector<std::string> row{p.name, std::to_string(c), report(x), report(dens * norm)};
          write_csv_row(out, row);
        }
      }
    }
    finish(out, path);
  }
}

json design_json(const SimulationDesign& d) {
  return {{"n_sites", d.n_sites},
          {"n_visits", d.n_visits},
          {"n_replicates", d.n_replicates},
          {"true_beta", d.true_beta},
          {"true_p", d.true_p},
          {"true_sigma2", d.true_sigma2},
          {"true_theta", d.true_theta},
          {"mean_edge_length_km", d.mean_edge_length},
          {"covariate_law", "normal(0, 1)"},
          {"network_seed", d.network_seed},
          {"data_seed", d.data_seed}};
}

namespace {

json aggregate_json(const ModelAggregate& a) {
  json bias = json::object();
  for (const auto& [name, b] : a.bias)
    bias[name] = {{"value", finite_or_null(b.value)}, {"absolute", b.absolute}};
  return {{"n_replicates", a.n_replicates}, {"relative_bias", bias}, {"rmspe", finite_or_null(a.rmspe)}};
}

}  // namespace

json study_json(const StudyReport& r) {
  json reps = json::array();
  int failed_spatial = 0;
  int failed_nonspatial = 0;
  for (const auto& rep : r.replicates) {
    failed_spatial += rep.spatial.failed;
    failed_nonspatial += rep.nonspatial.failed;
    json errors = json::object();
    if (!rep.spatial.error.empty()) errors["spatial"] = rep.spatial.error;
    if (!rep.nonspatial.error.empty()) errors["nonspatial"] = rep.nonspatial.error;
    if (!errors.empty()) reps.push_back({{"replicate", rep.replicate_id}, {"errors", errors}});
  }
  return {{"schema", "ssnocc-study-v1"},
          {"version", kVersion},
          {"design", design_json(r.design)},
          {"sampler", sampler_json(r.sampler)},
          {"rmspe_definition",
           "sqrt(mean over sites and replicates of (posterior mean psi - true psi)^2) at the "
           "simulated sites"},
          {"relative_bias_definition", "(mean over replicates of posterior mean - truth) / truth"},
          {"aggregates",
           {{"spatial", {{"all", aggregate_json(r.spatial_all)},
                         {"converged_only", aggregate_json(r.spatial_converged)}}},
            {"nonspatial", {{"all", aggregate_json(r.nonspatial_all)},
                            {"converged_only", aggregate_json(r.nonspatial_converged)}}}}},
          {"failed_fits", {{"spatial", failed_spatial}, {"nonspatial", failed_nonspatial}}},
          {"replicate_errors", reps}};
}

void write_study_outputs(const fs::path& dir, const StudyReport& study) {
  ensure_output_dir(dir);
  {
    const fs::path path = dir / "study.csv";
    auto out = open_for_write(path);
    std::vector<std::string> header{"replicate", "model", "failed", "converged"};
    for (std::size_t k = 0; k < study.design.true_beta.size(); ++k)
      header.push_back("beta" + std::to_string(k));
    header.insert(header.end(), {"p", "sigma2", "theta", "theta_over_sigma2", "rmspe",
                                 "max_rhat", "min_ess", "sampler_seed"});
    write_csv_row(out, header);
    for (const auto& rep : study.replicates) {
      for (const bool spatial : {true, false}) {
        const ModelEstimates& e = spatial ? rep.spatial : rep.nonspatial;
        std::vector<std::string> row{std::to_string(rep.replicate_id),
                                     spatial ? "spatial" : "nonspatial", e.failed ? "1" : "0",
                                     e.converged ? "1" : "0"};
        for (std::size_t k = 0; k < study.design.true_beta.size(); ++k)
          row.push_back(k < e.beta.size() ? report(e.beta[k]) : "nan");
        for (double v : {e.p, e.sigma2, e.theta, e.theta_over_sigma2, e.rmspe, e.max_rhat, e.min_ess})
          row.push_back(e.failed ? "nan" : report(v));
        row.push_back(std::to_string(rep.sampler_seed));
        write_csv_row(out, row);
      }
    }
    finish(out, path);
  }
  const fs::path path = dir / "study.json";
  auto out = open_for_write(path);
  out << study_json(study).dump(2) << '\n';
  finish(out, path);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw IoError("sha256: cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(got));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

}  // namespace ssnocc
