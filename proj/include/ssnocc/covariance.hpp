#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssnocc/stream_network.hpp"

namespace ssnocc {

struct TailDown {
  double sigma2 = 0.0;
  double theta = 1.0;
};
struct TailUp {
  double sigma2 = 0.0;
  double theta = 1.0;
};
struct Euclidean {
  double sigma2 = 0.0;
  double theta = 1.0;
};
struct Nugget {
  double sigma2 = 0.0;
};

// Which covariance components enter the spatial random effect.
struct CovarianceSpec {
  std::optional<TailDown> tail_down;
  std::optional<TailUp> tail_up;
  std::optional<Euclidean> euclidean;
  std::optional<Nugget> nugget;

  bool empty() const { return !tail_down && !tail_up && !euclidean && !nugget; }
};

struct SiteCoordinates {
  std::vector<double> x;
  std::vector<double> y;
  std::size_t size() const { return x.size(); }
};

// Symmetric tail-up weights in [0, 1], zero on flow-unconnected pairs.
struct SpatialWeightTable {
  Eigen::MatrixXd weights;
};

struct CovarianceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> site_order;
};

CovarianceMatrix tail_down_exp(const PairDistanceTable& dist, double sigma2, double theta);
CovarianceMatrix tail_up_exp(const PairDistanceTable& dist, const SpatialWeightTable& weights,
                             double sigma2, double theta);
CovarianceMatrix euclidean_exp(const SiteCoordinates& coords, double sigma2, double theta,
                               std::vector<std::string> site_order = {});

// Unit-sill tail-down correlation written into `out`, reusing its storage.
void tail_down_correlation(const PairDistanceTable& dist, double theta, Eigen::MatrixXd& out);

CovarianceMatrix assemble(const CovarianceSpec& spec, const PairDistanceTable& dist,
                          const SiteCoordinates* coords = nullptr,
                          const SpatialWeightTable* weights = nullptr);

// Proportional-influence tail-up weights: for a flow-connected pair the
// weight is sqrt of the product of the edges' additive proportions between
// the upstream site's edge and the downstream site's edge.
SpatialWeightTable additive_weights(const NetworkIndex& index,
                                    std::span<const SitePlacement> sites,
                                    const PairDistanceTable& dist);

struct JitterPolicy {
  // Multiples of mean(diag) tried after a plain factorization fails.
  std::vector<double> levels{1e-10, 1e-8, 1e-6};
};

struct LowerTriangularFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;  // absolute amount added to the diagonal
  int jitter_level = 0;  // 0 = none, k = policy.levels[k-1]
};

// L with L L^T = cov + jitter I. Throws NumericError when the last jitter
// level still fails.
LowerTriangularFactor cholesky_lower(const Eigen::MatrixXd& cov, const JitterPolicy& policy = {});

bool is_symmetric(const Eigen::MatrixXd& m, double rel_tol = 1e-12);

// Semidefinite Cholesky sweep on the symmetrized matrix; every pivot must be
// at least -tol_factor * trace / n.
bool is_psd(const Eigen::MatrixXd& m, double tol_factor = 1e-8);

}  // namespace ssnocc
