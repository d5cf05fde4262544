#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ssnocc/random.hpp"
#include "ssnocc/stream_network.hpp"

namespace fixtures {

using ssnocc::Edge;
using ssnocc::SitePlacement;
using ssnocc::StreamNetwork;

// E1: J->O (10 km), E2: A->J (5 km), E3: B->J (7 km).
inline StreamNetwork y_network() {
  StreamNetwork net;
  net.outlet_node = "O";
  net.edges = {{"E1", "J", "O", 10.0, 1.0}, {"E2", "A", "J", 5.0, 1.0}, {"E3", "B", "J", 7.0, 1.0}};
  return net;
}

// s1: 2 km above J on E2; s2: 3 km above J on E3; s3: 4 km below J on E1.
inline std::vector<SitePlacement> y_sites() {
  return {{"s1", "E2", 2.0}, {"s2", "E3", 3.0}, {"s3", "E1", 6.0}};
}

// Random tree: each new edge drains into the upstream node of an existing
// edge, so confluences may have any number of tributaries.
inline StreamNetwork random_tree(int n_edges, ssnocc::Rng& rng) {
  StreamNetwork net;
  net.outlet_node = "n0";
  std::uniform_real_distribution<double> len(0.1, 10.0);
  std::uniform_real_distribution<double> add(0.0, 3.0);
  for (int e = 0; e < n_edges; ++e) {
    std::string down = "n0";
    if (e > 0) {
      const int parent = std::uniform_int_distribution<int>(0, e - 1)(rng);
      down = net.edges[static_cast<std::size_t>(parent)].upstream_node;
    }
    net.edges.push_back({"e" + std::to_string(e), "n" + std::to_string(e + 1), down, len(rng), add(rng)});
  }
  return net;
}

inline std::vector<SitePlacement> random_sites(const StreamNetwork& net, int n, ssnocc::Rng& rng) {
  std::vector<SitePlacement> sites;
  for (int i = 0; i < n; ++i) {
    const auto& e = net.edges[std::uniform_int_distribution<std::size_t>(0, net.edges.size() - 1)(rng)];
    sites.push_back({"s" + std::to_string(i), e.edge_id, ssnocc::uniform01(rng) * e.length});
  }
  return sites;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ssnocc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
