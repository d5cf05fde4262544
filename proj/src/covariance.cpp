#include "ssnocc/covariance.hpp"

#include <cmath>

#include "ssnocc/error.hpp"

namespace ssnocc {

namespace {

void check_kernel_params(double sigma2, double theta, const char* what) {
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw ParameterError(std::string(what) + ": range theta must be positive");
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2))
    throw ParameterError(std::string(what) + ": partial sill must be nonnegative");
}

}  // namespace

void tail_down_correlation(const PairDistanceTable& dist, double theta, Eigen::MatrixXd& out) {
  const Eigen::Index n = static_cast<Eigen::Index>(dist.size());
  out.resize(n, n);
  const double inv = 1.0 / theta;
  for (Eigen::Index j = 0; j < n; ++j) {
    out(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      // Flow-unconnected pairs use a + b, which equals h by construction.
      const double d = dist.connected(i, j) ? dist.h(i, j) : dist.a(i, j) + dist.b(i, j);
      const double v = std::exp(-d * inv);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
}

CovarianceMatrix tail_down_exp(const PairDistanceTable& dist, double sigma2, double theta) {
  check_kernel_params(sigma2, theta, "tail-down");
  CovarianceMatrix c;
  c.site_order = dist.site_ids;
  tail_down_correlation(dist, theta, c.values);
  c.values *= sigma2;
  return c;
}

CovarianceMatrix tail_up_exp(const PairDistanceTable& dist, const SpatialWeightTable& weights,
                             double sigma2, double theta) {
  check_kernel_params(sigma2, theta, "tail-up");
  const Eigen::Index n = static_cast<Eigen::Index>(dist.size());
  const auto& w = weights.weights;
  if (w.rows() != n || w.cols() != n)
    throw ParameterError("tail-up: weight table does not match the number of sites");
  CovarianceMatrix c;
  c.site_order = dist.site_ids;
  c.values.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    c.values(j, j) = sigma2;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double wij = w(i, j);
      if (!(wij >= 0.0 && wij <= 1.0))
        throw ParameterError("tail-up: weight outside [0, 1] for pair (" + dist.site_ids[i] +
                             ", " + dist.site_ids[j] + ")");
      if (w(j, i) != wij) throw ParameterError("tail-up: weight table is not symmetric");
      double v = 0.0;
      if (dist.connected(i, j)) {
        v = wij * sigma2 * std::exp(-dist.h(i, j) / theta);
      } else if (wij != 0.0) {
        throw ParameterError("tail-up: nonzero weight on flow-unconnected pair (" +
                             dist.site_ids[i] + ", " + dist.site_ids[j] + ")");
      }
      c.values(i, j) = v;
      c.values(j, i) = v;
    }
  }
  return c;
}

CovarianceMatrix euclidean_exp(const SiteCoordinates& coords, double sigma2, double theta,
                               std::vector<std::string> site_order) {
  check_kernel_params(sigma2, theta, "euclidean");
  if (coords.x.size() != coords.y.size())
    throw ParameterError("euclidean: coordinate vectors differ in length");
  if (!site_order.empty() && site_order.size() != coords.size())
    throw ParameterError("euclidean: missing coordinates for some sites");
  const Eigen::Index n = static_cast<Eigen::Index>(coords.size());
  CovarianceMatrix c;
  c.site_order = std::move(site_order);
  c.values.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    c.values(j, j) = sigma2;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double d = std::hypot(coords.x[i] - coords.x[j], coords.y[i] - coords.y[j]);
      const double v = sigma2 * std::exp(-d / theta);
      c.values(i, j) = v;
      c.values(j, i) = v;
    }
  }
  return c;
}

CovarianceMatrix assemble(const CovarianceSpec& spec, const PairDistanceTable& dist,
                          const SiteCoordinates* coords, const SpatialWeightTable* weights) {
  if (spec.empty()) throw ParameterError("covariance spec has no components");
  const Eigen::Index n = static_cast<Eigen::Index>(dist.size());
  CovarianceMatrix total;
  total.site_order = dist.site_ids;
  total.values = Eigen::MatrixXd::Zero(n, n);
  if (spec.tail_down)
    total.values += tail_down_exp(dist, spec.tail_down->sigma2, spec.tail_down->theta).values;
  if (spec.tail_up) {
    if (!weights) throw ParameterError("tail-up component requires a weight table");
    total.values += tail_up_exp(dist, *weights, spec.tail_up->sigma2, spec.tail_up->theta).values;
  }
  if (spec.euclidean) {
    if (!coords || coords->size() != dist.size())
      throw ParameterError("euclidean component requires x/y coordinates for every site");
    total.values +=
        euclidean_exp(*coords, spec.euclidean->sigma2, spec.euclidean->theta).values;
  }
  if (spec.nugget) {
    if (!(spec.nugget->sigma2 >= 0.0)) throw ParameterError("nugget variance must be nonnegative");
    total.values.diagonal().array() += spec.nugget->sigma2;
  }
  return total;
}

SpatialWeightTable additive_weights(const NetworkIndex& index,
                                    std::span<const SitePlacement> sites,
                                    const PairDistanceTable& dist) {
  const std::size_t ne = index.edge_count();
  const auto& edges = index.network().edges;
  std::vector<double> proportion(ne, 1.0);
  for (std::size_t e = 0; e < ne; ++e) {
    const auto& group = index.siblings(e);
    double total = 0.0;
    for (std::size_t s : group) total += edges[s].additive_value;
    proportion[e] = total > 0.0 ? edges[e].additive_value / total
                                : 1.0 / static_cast<double>(group.size());
  }

  const std::size_t n = sites.size();
  std::vector<std::size_t> edge_of(n);
  for (std::size_t i = 0; i < n; ++i) edge_of[i] = index.edge_index(sites[i].edge_id);

  SpatialWeightTable w;
  w.weights = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!dist.flow_connected(i, j)) {
        w.weights(i, j) = w.weights(j, i) = 0.0;
        continue;
      }
      std::size_t up = edge_of[i];
      std::size_t down = edge_of[j];
      // For a flow-connected pair the deeper edge is the upstream one.
      if (index.depth(up) < index.depth(down)) std::swap(up, down);
      double product = 1.0;
      for (std::size_t e = up; e != down && e != NetworkIndex::npos; e = index.parent(e))
        product *= proportion[e];
      w.weights(i, j) = w.weights(j, i) = std::sqrt(product);
    }
  }
  return w;
}

LowerTriangularFactor cholesky_lower(const Eigen::MatrixXd& cov, const JitterPolicy& policy) {
  const Eigen::Index n = cov.rows();
  if (cov.cols() != n) throw ParameterError("cholesky: matrix is not square");
  LowerTriangularFactor f;
  if (n == 0) return f;
  if (cov.isZero(0.0)) {
    f.lower = Eigen::MatrixXd::Zero(n, n);
    return f;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) {
    f.lower = llt.matrixL();
    return f;
  }
  const double mean_diag = cov.diagonal().mean();
  if (mean_diag > 0.0) {
    Eigen::MatrixXd work;
    for (std::size_t k = 0; k < policy.levels.size(); ++k) {
      const double jitter = policy.levels[k] * mean_diag;
      work = cov;
      work.diagonal().array() += jitter;
      llt.compute(work);
      if (llt.info() == Eigen::Success) {
        f.lower = llt.matrixL();
        f.jitter = jitter;
        f.jitter_level = static_cast<int>(k) + 1;
        return f;
      }
    }
  }
  throw NumericError("matrix not PSD within tolerance");
}

bool is_symmetric(const Eigen::MatrixXd& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

bool is_psd(const Eigen::MatrixXd& m, double tol_factor) {
  const Eigen::Index n = m.rows();
  if (n != m.cols()) return false;
  if (n == 0) return true;
  const Eigen::MatrixXd a = 0.5 * (m + m.transpose());
  const double trace = a.trace();
  const double tol = tol_factor * (trace > 0.0 ? trace / static_cast<double>(n) : 1.0);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double pivot = a(k, k) - l.row(k).head(k).squaredNorm();
    if (pivot < -tol) return false;
    if (pivot <= tol) continue;  // numerically zero: leave column empty
    const double d = std::sqrt(pivot);
    l(k, k) = d;
    for (Eigen::Index i = k + 1; i < n; ++i)
      l(i, k) = (a(i, k) - l.row(i).head(k).dot(l.row(k).head(k))) / d;
  }
  return true;
}

}  // namespace ssnocc
