#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace ssnocc {

// One reach of the network. Water flows from upstream_node to
// downstream_node. Lengths are kilometers.
struct Edge {
  std::string edge_id;
  std::string upstream_node;
  std::string downstream_node;
  double length = 0.0;
  double additive_value = 1.0;  // only consulted by tail-up weights
};

// Rooted dendritic tree oriented toward outlet_node.
struct StreamNetwork {
  std::vector<Edge> edges;
  std::string outlet_node;
};

// A survey site: a point on an edge, measured upstream from the edge's
// downstream node.
struct SitePlacement {
  std::string site_id;
  std::string edge_id;
  double dist_to_edge_downstream_node = 0.0;
};

enum class Connectivity : std::uint8_t { FlowConnected, FlowUnconnected };

struct PairDistance {
  std::string site_i;
  std::string site_j;
  Connectivity connectivity = Connectivity::FlowConnected;
  double h = 0.0;  // total stream distance
  double a = 0.0;  // shorter distance to the common downstream junction
  double b = 0.0;  // longer distance
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_network(const StreamNetwork& net);

// Node with no downstream edge, if there is exactly one; empty otherwise.
std::string infer_outlet(std::span<const Edge> edges);

// Precomputed topology of a valid network: parent pointers on edges and
// distances to the outlet. Immutable once built.
class NetworkIndex {
 public:
  // Throws DataError if the network fails validation.
  explicit NetworkIndex(const StreamNetwork& net);

  const StreamNetwork& network() const { return net_; }
  std::size_t edge_count() const { return net_.edges.size(); }

  // Index of edge_id, throws PlacementError when unknown.
  std::size_t edge_index(const std::string& edge_id) const;
  bool has_edge(const std::string& edge_id) const;

  // Downstream neighbour of edge e, or npos at the outlet.
  std::size_t parent(std::size_t e) const { return parent_[e]; }
  std::size_t depth(std::size_t e) const { return depth_[e]; }
  // Stream distance from the downstream node of e to the outlet.
  double downstream_distance(std::size_t e) const { return down_dist_[e]; }
  // Edges draining into the same node as e (e included).
  const std::vector<std::size_t>& siblings(std::size_t e) const;
  const std::vector<std::size_t>& upstream_edges(std::size_t e) const { return children_[e]; }

  // Throws PlacementError if the site is not on the network.
  void check_placement(const SitePlacement& s) const;
  double distance_to_outlet(const SitePlacement& s) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  StreamNetwork net_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> depth_;
  std::vector<double> down_dist_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> group_of_;                 // edge -> sibling group
  std::vector<std::vector<std::size_t>> groups_;      // edges sharing a downstream node
};

PairDistance classify_pair(const NetworkIndex& index, const SitePlacement& si,
                           const SitePlacement& sj);
PairDistance classify_pair(const StreamNetwork& net, const SitePlacement& si,
                           const SitePlacement& sj);

// Symmetric S x S tables for all site pairs, in the order the sites were given.
struct PairDistanceTable {
  std::vector<std::string> site_ids;
  Eigen::MatrixXd h;
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  // 1 = flow-connected, 0 = flow-unconnected
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> connected;

  std::size_t size() const { return site_ids.size(); }
  bool flow_connected(std::size_t i, std::size_t j) const { return connected(i, j) != 0; }
  double max_distance() const;
  double median_pairwise_distance() const;
  PairDistance pair(std::size_t i, std::size_t j) const;
};

PairDistanceTable distance_tables(const NetworkIndex& index,
                                  std::span<const SitePlacement> sites);
PairDistanceTable distance_tables(const StreamNetwork& net,
                                  std::span<const SitePlacement> sites);

}  // namespace ssnocc
