#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <queue>

#include "fixtures.hpp"
#include "ssnocc/error.hpp"
#include "ssnocc/stream_network.hpp"

using namespace ssnocc;

namespace {

bool mentions(const ValidationReport& r, const std::string& needle) {
  return std::any_of(r.violations.begin(), r.violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

// Shortest path over the undirected graph of nodes plus one node per site.
double dijkstra_distance(const StreamNetwork& net, const SitePlacement& a, const SitePlacement& b) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> adj;
  auto link = [&](const std::string& u, const std::string& v, double w) {
    adj[u].push_back({v, w});
    adj[v].push_back({u, w});
  };
  for (const auto& e : net.edges) {
    // Split the edge at every site on it.
    std::vector<std::pair<double, std::string>> cuts{{0.0, e.downstream_node}, {e.length, e.upstream_node}};
    for (const auto* s : {&a, &b})
      if (s->edge_id == e.edge_id) cuts.push_back({s->dist_to_edge_downstream_node, "site:" + s->site_id});
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t i = 1; i < cuts.size(); ++i)
      link(cuts[i - 1].second, cuts[i].second, cuts[i].first - cuts[i - 1].first);
  }
  std::map<std::string, double> dist;
  using Item = std::pair<double, std::string>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  const std::string src = "site:" + a.site_id;
  dist[src] = 0.0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& [v, w] : adj[u]) {
      const auto it = dist.find(v);
      if (it == dist.end() || d + w < it->second) {
        dist[v] = d + w;
        pq.push({d + w, v});
      }
    }
  }
  return dist.at("site:" + b.site_id);
}

}  // namespace

TEST_CASE("y-network validates") {
  CHECK(validate_network(fixtures::y_network()).ok());
}

TEST_CASE("validation violations") {
  SUBCASE("nonpositive length") {
    auto net = fixtures::y_network();
    net.edges[0].length = 0.0;
    const auto r = validate_network(net);
    CHECK_FALSE(r.ok());
    CHECK(mentions(r, "nonpositive edge length"));
  }
  SUBCASE("two-edge cycle") {
    StreamNetwork net;
    net.outlet_node = "O";
    net.edges = {{"E0", "X", "O", 1.0, 1.0}, {"E1", "A", "B", 1.0, 1.0}, {"E2", "B", "A", 1.0, 1.0}};
    CHECK(mentions(validate_network(net), "cycle detected"));
  }
  SUBCASE("multiple downstream edges") {
    auto net = fixtures::y_network();
    net.edges.push_back({"E4", "A", "O", 1.0, 1.0});
    CHECK(mentions(validate_network(net), "multiple downstream edges"));
  }
  SUBCASE("disconnected component") {
    auto net = fixtures::y_network();
    net.edges.push_back({"E4", "X", "Y", 1.0, 1.0});
    CHECK(mentions(validate_network(net), "disconnected component"));
  }
  SUBCASE("dangling outlet") {
    auto net = fixtures::y_network();
    net.outlet_node = "Q";
    CHECK(mentions(validate_network(net), "dangling node reference"));
  }
  SUBCASE("empty network") { CHECK_FALSE(validate_network(StreamNetwork{}).ok()); }
  SUBCASE("negative additive value") {
    auto net = fixtures::y_network();
    net.edges[1].additive_value = -1.0;
    CHECK(mentions(validate_network(net), "negative additive value"));
  }
  SUBCASE("self loop") {
    auto net = fixtures::y_network();
    net.edges[1].upstream_node = "J";
    CHECK_FALSE(validate_network(net).ok());
  }
}

TEST_CASE("three tributaries at one confluence are allowed") {
  auto net = fixtures::y_network();
  net.edges.push_back({"E4", "C", "J", 2.0, 1.0});
  CHECK(validate_network(net).ok());
}

TEST_CASE("outlet inference") {
  const auto net = fixtures::y_network();
  CHECK(infer_outlet(net.edges) == "O");
}

TEST_CASE("classify_pair on the y-network") {
  const auto net = fixtures::y_network();
  const auto s = fixtures::y_sites();
  SUBCASE("flow-unconnected") {
    const auto d = classify_pair(net, s[0], s[1]);
    CHECK(d.connectivity == Connectivity::FlowUnconnected);
    CHECK(d.a == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d.b == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(d.h == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("flow-connected") {
    const auto d = classify_pair(net, s[0], s[2]);
    CHECK(d.connectivity == Connectivity::FlowConnected);
    CHECK(d.a == 0.0);
    CHECK(d.b == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(d.h == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("identical placement") {
    const auto d = classify_pair(net, s[0], s[0]);
    CHECK(d.connectivity == Connectivity::FlowConnected);
    CHECK(d.h == 0.0);
    CHECK(d.a == 0.0);
    CHECK(d.b == 0.0);
  }
  SUBCASE("same edge, 1 km apart") {
    const SitePlacement a{"a", "E1", 2.0};
    const SitePlacement b{"b", "E1", 3.0};
    const auto d = classify_pair(net, a, b);
    CHECK(d.connectivity == Connectivity::FlowConnected);
    CHECK(d.h == doctest::Approx(1.0));
  }
  SUBCASE("unknown edge") {
    const SitePlacement bad{"x", "E9", 0.0};
    CHECK_THROWS_AS(classify_pair(net, s[0], bad), PlacementError);
  }
  SUBCASE("offset beyond edge length") {
    const NetworkIndex idx(net);
    CHECK_THROWS_AS(idx.check_placement({"x", "E2", 5.5}), PlacementError);
    CHECK_THROWS_AS(idx.check_placement({"x", "E2", -0.1}), PlacementError);
    CHECK_NOTHROW(idx.check_placement({"x", "E2", 5.0}));
  }
}

TEST_CASE("distance tables on the y-network") {
  const auto dist = distance_tables(fixtures::y_network(), fixtures::y_sites());
  const double expected[3][3] = {{0, 5, 6}, {5, 0, 7}, {6, 7, 0}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(dist.h(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-15));
  CHECK(dist.flow_connected(0, 2));
  CHECK(dist.flow_connected(1, 2));
  CHECK_FALSE(dist.flow_connected(0, 1));
  CHECK(dist.max_distance() == doctest::Approx(7.0));
}

TEST_CASE("single site and duplicates") {
  const auto net = fixtures::y_network();
  const std::vector<SitePlacement> one{{"s1", "E2", 1.0}};
  const auto d = distance_tables(net, one);
  CHECK(d.h.rows() == 1);
  CHECK(d.h(0, 0) == 0.0);
  const std::vector<SitePlacement> dup{{"s1", "E2", 1.0}, {"s1", "E3", 1.0}};
  CHECK_THROWS_AS(distance_tables(net, dup), DataError);
}

TEST_CASE("invalid network is rejected by the index") {
  auto net = fixtures::y_network();
  net.edges[0].length = -1.0;
  CHECK_THROWS_AS(NetworkIndex{net}, DataError);
}

TEST_CASE("pair invariants and brute-force distances on random trees") {
  Rng rng = make_stream(7, {1});
  for (int trial = 0; trial < 200; ++trial) {
    const int n_edges = std::uniform_int_distribution<int>(1, 12)(rng);
    const auto net = fixtures::random_tree(n_edges, rng);
    REQUIRE(validate_network(net).ok());
    const auto sites = fixtures::random_sites(net, 6, rng);
    const auto dist = distance_tables(net, sites);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      for (std::size_t j = 0; j < sites.size(); ++j) {
        const auto p = dist.pair(i, j);
        const auto q = dist.pair(j, i);
        CHECK(p.h >= 0.0);
        CHECK(p.a >= 0.0);
        CHECK(p.b >= p.a);
        CHECK(p.h == q.h);
        CHECK(p.a == q.a);
        CHECK(p.b == q.b);
        CHECK(p.connectivity == q.connectivity);
        if (p.connectivity == Connectivity::FlowUnconnected) {
          CHECK(p.h == p.a + p.b);
        } else {
          CHECK(p.a == 0.0);
          CHECK(p.b == p.h);
        }
        if (i < j)
          CHECK(p.h == doctest::Approx(dijkstra_distance(net, sites[i], sites[j])).epsilon(1e-12));
        for (std::size_t k = 0; k < sites.size(); ++k)
          CHECK(dist.h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) <=
                dist.h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                    dist.h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) + 1e-9);
      }
    }
  }
}

TEST_CASE("flow connection matches the downstream path") {
  // Connected iff one site's edge lies on the other's path to the outlet.
  Rng rng = make_stream(8, {1});
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = fixtures::random_tree(10, rng);
    const NetworkIndex idx(net);
    const auto sites = fixtures::random_sites(net, 5, rng);
    for (const auto& a : sites) {
      for (const auto& b : sites) {
        auto on_path = [&](std::size_t from, std::size_t target) {
          for (std::size_t e = from; e != NetworkIndex::npos; e = idx.parent(e))
            if (e == target) return true;
          return false;
        };
        const auto ea = idx.edge_index(a.edge_id);
        const auto eb = idx.edge_index(b.edge_id);
        const bool expected = on_path(ea, eb) || on_path(eb, ea);
        CHECK((classify_pair(idx, a, b).connectivity == Connectivity::FlowConnected) == expected);
      }
    }
  }
}
