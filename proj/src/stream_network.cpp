#include "ssnocc/stream_network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "ssnocc/error.hpp"

namespace ssnocc {

std::string infer_outlet(std::span<const Edge> edges) {
  std::set<std::string> has_downstream;
  std::set<std::string> nodes;
  for (const auto& e : edges) {
    has_downstream.insert(e.upstream_node);
    nodes.insert(e.upstream_node);
    nodes.insert(e.downstream_node);
  }
  std::string outlet;
  for (const auto& n : nodes) {
    if (has_downstream.count(n)) continue;
    if (!outlet.empty()) return {};
    outlet = n;
  }
  return outlet;
}

ValidationReport validate_network(const StreamNetwork& net) {
  ValidationReport report;
  auto& out = report.violations;
  if (net.edges.empty()) {
    out.push_back("network has no edges");
    return report;
  }

  std::set<std::string> ids;
  std::set<std::string> nodes;
  // node -> downstream node via its downstream edges
  std::map<std::string, std::vector<std::string>> downstream;
  for (const auto& e : net.edges) {
    if (!ids.insert(e.edge_id).second)
      out.push_back("duplicate edge id '" + e.edge_id + "'");
    if (!(e.length > 0.0) || !std::isfinite(e.length))
      out.push_back("nonpositive edge length on edge '" + e.edge_id + "'");
    if (!(e.additive_value >= 0.0) || !std::isfinite(e.additive_value))
      out.push_back("negative additive value on edge '" + e.edge_id + "'");
    if (e.upstream_node == e.downstream_node)
      out.push_back("edge '" + e.edge_id + "' has identical upstream and downstream node");
    nodes.insert(e.upstream_node);
    nodes.insert(e.downstream_node);
    downstream[e.upstream_node].push_back(e.downstream_node);
  }

  if (net.outlet_node.empty() || !nodes.count(net.outlet_node)) {
    out.push_back("dangling node reference: outlet '" + net.outlet_node +
                  "' is not referenced by any edge");
  } else if (downstream.count(net.outlet_node)) {
    out.push_back("outlet node '" + net.outlet_node + "' has a downstream edge");
  }

  for (const auto& [node, next] : downstream) {
    if (next.size() > 1)
      out.push_back("multiple downstream edges from node '" + node + "'");
  }

  // Follow the (first) downstream pointer from every node. 0 = unvisited,
  // 1 = on current path, 2 = resolved.
  std::map<std::string, int> state;
  std::set<std::string> drains;  // nodes known to reach the outlet
  bool cycle_reported = false;
  bool disconnected_reported = false;
  for (const auto& start : nodes) {
    if (state[start] == 2) continue;
    std::vector<std::string> path;
    std::string cur = start;
    bool reaches_outlet = false;
    bool in_cycle = false;
    while (true) {
      if (cur == net.outlet_node) {
        reaches_outlet = true;
        break;
      }
      int& st = state[cur];
      if (st == 1) {
        in_cycle = true;
        break;
      }
      if (st == 2) {
        reaches_outlet = drains.count(cur) > 0;
        break;
      }
      st = 1;
      path.push_back(cur);
      auto it = downstream.find(cur);
      if (it == downstream.end()) break;  // terminal that is not the outlet
      cur = it->second.front();
    }
    for (const auto& n : path) {
      state[n] = 2;
      if (reaches_outlet) drains.insert(n);
    }
    if (in_cycle && !cycle_reported) {
      out.push_back("cycle detected through node '" + cur + "'");
      cycle_reported = true;
    } else if (!in_cycle && !reaches_outlet && !disconnected_reported) {
      out.push_back("disconnected component: node '" + start +
                    "' does not drain to the outlet");
      disconnected_reported = true;
    }
  }
  return report;
}

NetworkIndex::NetworkIndex(const StreamNetwork& net) : net_(net) {
  if (auto report = validate_network(net_); !report.ok()) {
    std::string msg = "invalid stream network:";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw DataError(msg);
  }
  const std::size_t n = net_.edges.size();
  std::unordered_map<std::string, std::size_t> by_upstream_node;
  std::unordered_map<std::string, std::size_t> group_by_node;
  parent_.assign(n, npos);
  depth_.assign(n, 0);
  down_dist_.assign(n, 0.0);
  children_.assign(n, {});
  group_of_.assign(n, 0);
  for (std::size_t e = 0; e < n; ++e) {
    index_.emplace(net_.edges[e].edge_id, e);
    by_upstream_node.emplace(net_.edges[e].upstream_node, e);
    auto [it, inserted] = group_by_node.emplace(net_.edges[e].downstream_node, groups_.size());
    if (inserted) groups_.emplace_back();
    groups_[it->second].push_back(e);
    group_of_[e] = it->second;
  }
  std::vector<std::size_t> roots;
  for (std::size_t e = 0; e < n; ++e) {
    const auto it = by_upstream_node.find(net_.edges[e].downstream_node);
    if (it == by_upstream_node.end()) {
      roots.push_back(e);
    } else {
      parent_[e] = it->second;
      children_[it->second].push_back(e);
    }
  }
  // Breadth-first from the outlet edges.
  std::vector<std::size_t> queue = roots;
  for (std::size_t k = 0; k < queue.size(); ++k) {
    const std::size_t e = queue[k];
    for (std::size_t c : children_[e]) {
      depth_[c] = depth_[e] + 1;
      down_dist_[c] = down_dist_[e] + net_.edges[e].length;
      queue.push_back(c);
    }
  }
}

std::size_t NetworkIndex::edge_index(const std::string& edge_id) const {
  const auto it = index_.find(edge_id);
  if (it == index_.end()) throw PlacementError("unknown edge_id '" + edge_id + "'");
  return it->second;
}

bool NetworkIndex::has_edge(const std::string& edge_id) const {
  return index_.count(edge_id) > 0;
}

const std::vector<std::size_t>& NetworkIndex::siblings(std::size_t e) const {
  return groups_[group_of_[e]];
}

void NetworkIndex::check_placement(const SitePlacement& s) const {
  const std::size_t e = edge_index(s.edge_id);
  const double len = net_.edges[e].length;
  const double d = s.dist_to_edge_downstream_node;
  if (!(d >= 0.0) || !(d <= len)) {
    throw PlacementError("site '" + s.site_id + "' offset " + std::to_string(d) +
                         " km lies outside edge '" + s.edge_id + "' of length " +
                         std::to_string(len) + " km");
  }
}

double NetworkIndex::distance_to_outlet(const SitePlacement& s) const {
  return s.dist_to_edge_downstream_node + down_dist_[edge_index(s.edge_id)];
}

namespace {

struct Located {
  std::size_t edge;
  double to_outlet;
};

Located locate(const NetworkIndex& index, const SitePlacement& s) {
  index.check_placement(s);
  const std::size_t e = index.edge_index(s.edge_id);
  return {e, s.dist_to_edge_downstream_node + index.downstream_distance(e)};
}

// Returns (connectivity, a, b) for two located points.
void classify(const NetworkIndex& index, Located p, Located q, Connectivity& conn, double& a,
              double& b) {
  auto connected = [&](double h) {
    conn = Connectivity::FlowConnected;
    a = 0.0;
    b = h;
  };
  if (p.edge == q.edge) {
    connected(std::abs(p.to_outlet - q.to_outlet));
    return;
  }
  std::size_t x = p.edge;
  std::size_t y = q.edge;
  while (index.depth(x) > index.depth(y)) x = index.parent(x);
  while (index.depth(y) > index.depth(x)) y = index.parent(y);
  if (x == y) {
    // One edge lies on the other's path to the outlet.
    connected(std::abs(p.to_outlet - q.to_outlet));
    return;
  }
  while (index.parent(x) != index.parent(y)) {
    x = index.parent(x);
    y = index.parent(y);
  }
  // x and y now drain into the common junction.
  const double junction = index.downstream_distance(x);
  const double dp = p.to_outlet - junction;
  const double dq = q.to_outlet - junction;
  conn = Connectivity::FlowUnconnected;
  a = std::min(dp, dq);
  b = std::max(dp, dq);
}

}  // namespace

PairDistance classify_pair(const NetworkIndex& index, const SitePlacement& si,
                           const SitePlacement& sj) {
  PairDistance out;
  out.site_i = si.site_id;
  out.site_j = sj.site_id;
  classify(index, locate(index, si), locate(index, sj), out.connectivity, out.a, out.b);
  out.h = out.connectivity == Connectivity::FlowConnected ? out.b : out.a + out.b;
  return out;
}

PairDistance classify_pair(const StreamNetwork& net, const SitePlacement& si,
                           const SitePlacement& sj) {
  return classify_pair(NetworkIndex(net), si, sj);
}

PairDistanceTable distance_tables(const NetworkIndex& index,
                                  std::span<const SitePlacement> sites) {
  const std::size_t n = sites.size();
  PairDistanceTable t;
  std::unordered_set<std::string> seen;
  std::vector<Located> loc;
  loc.reserve(n);
  for (const auto& s : sites) {
    if (!seen.insert(s.site_id).second)
      throw DataError("duplicate site_id '" + s.site_id + "'");
    loc.push_back(locate(index, s));
    t.site_ids.push_back(s.site_id);
  }
  t.h = Eigen::MatrixXd::Zero(n, n);
  t.a = Eigen::MatrixXd::Zero(n, n);
  t.b = Eigen::MatrixXd::Zero(n, n);
  t.connected.setOnes(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Connectivity c;
      double a, b;
      classify(index, loc[i], loc[j], c, a, b);
      const double h = c == Connectivity::FlowConnected ? b : a + b;
      t.h(i, j) = t.h(j, i) = h;
      t.a(i, j) = t.a(j, i) = a;
      t.b(i, j) = t.b(j, i) = b;
      t.connected(i, j) = t.connected(j, i) = c == Connectivity::FlowConnected ? 1 : 0;
    }
  }
  return t;
}

PairDistanceTable distance_tables(const StreamNetwork& net,
                                  std::span<const SitePlacement> sites) {
  return distance_tables(NetworkIndex(net), sites);
}

double PairDistanceTable::max_distance() const {
  return h.size() == 0 ? 0.0 : h.maxCoeff();
}

double PairDistanceTable::median_pairwise_distance() const {
  const std::size_t n = size();
  std::vector<double> v;
  v.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v.push_back(h(i, j));
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

PairDistance PairDistanceTable::pair(std::size_t i, std::size_t j) const {
  PairDistance p;
  p.site_i = site_ids[i];
  p.site_j = site_ids[j];
  p.connectivity = flow_connected(i, j) ? Connectivity::FlowConnected : Connectivity::FlowUnconnected;
  p.h = h(i, j);
  p.a = a(i, j);
  p.b = b(i, j);
  return p;
}

}  // namespace ssnocc
