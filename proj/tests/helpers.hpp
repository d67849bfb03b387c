#pragma once

#include "radfl/netmodel.hpp"
#include "radfl/seeding.hpp"

#include <doctest.h>

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

namespace testing {

using radfl::net::Link;
using radfl::net::NetworkGraph;
using radfl::net::Node;
using radfl::net::NodeKind;

/// Bit success giving packet success `packet` for K = `elements`.
inline double bit_for_packet(double packet, int elements = 1) { return std::pow(packet, 1.0 / (32.0 * elements)); }

/// Graph from an explicit edge list of (m, n, bit_success); nodes listed in
/// `relays` are relays, the rest participants.
inline NetworkGraph make_graph(int nodes, const std::vector<std::tuple<int, int, double>>& edges,
                               const std::vector<int>& relays = {}) {
  std::vector<Node> ns;
  for (int i = 0; i < nodes; ++i) {
    Node n;
    n.id = i;
    n.coords = {static_cast<double>(i), 0.0};
    n.kind = std::find(relays.begin(), relays.end(), i) != relays.end() ? NodeKind::Relay : NodeKind::Participant;
    ns.push_back(n);
  }
  std::vector<Link> ls;
  for (const auto& [m, n, b] : edges) {
    Link l;
    l.m = m;
    l.n = n;
    l.distance_m = 1.0;
    l.bit_success = b;
    ls.push_back(l);
  }
  return NetworkGraph(std::move(ns), std::move(ls), {});
}

/// Connected random graph on `nodes` nodes with random bit successes; some
/// success values are repeated on purpose so that ties occur.
inline NetworkGraph random_graph(int nodes, std::uint64_t seed, double extra_edge_prob = 0.4) {
  radfl::Rng rng(seed);
  const double palette[] = {0.999, 0.998, 0.995, 0.99, 0.999, 0.998};
  std::vector<std::tuple<int, int, double>> edges;
  auto pick = [&] { return rng.uniform() < 0.5 ? palette[rng.below(6)] : 0.98 + 0.02 * rng.uniform(); };
  for (int v = 1; v < nodes; ++v) edges.emplace_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(v))), v, pick());
  for (int a = 0; a < nodes; ++a)
    for (int b = a + 1; b < nodes; ++b) {
      bool have = false;
      for (const auto& [m, n, s] : edges) have |= (m == a && n == b) || (m == b && n == a);
      if (!have && rng.uniform() < extra_edge_prob) edges.emplace_back(a, b, pick());
    }
  return make_graph(nodes, edges);
}

template <class F>
std::string error_kind(F&& f) {
  try {
    f();
  } catch (const radfl::Error& e) {
    return e.kind();
  }
  return "";
}

inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace testing
