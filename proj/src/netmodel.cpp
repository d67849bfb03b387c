#include "radfl/netmodel.hpp"

#include "radfl/seeding.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

namespace radfl::net {

Link make_link(NodeId m, NodeId n, double distance_m, const ChannelParams& params) {
  Link link;
  link.m = std::min(m, n);
  link.n = std::max(m, n);
  link.distance_m = distance_m;
  link.path_loss_db = path_loss_db(distance_m / 1e3, params.carrier_in_formula_unit());
  link.snr_linear = snr_linear(params, link.path_loss_db);
  link.bit_success = bit_success_rate(link.snr_linear, params.modulation);
  return link;
}

bool is_connected(std::size_t num_nodes, std::span<const Link> links) {
  if (num_nodes == 0) return false;
  std::vector<std::size_t> parent(num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::size_t components = num_nodes;
  for (const Link& l : links) {
    const auto a = find(l.m), b = find(l.n);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

std::size_t density_link_count(std::size_t n, double edge_density) {
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return static_cast<std::size_t>(std::nearbyint(edge_density * pairs));
}

NetworkGraph::NetworkGraph(std::vector<Node> nodes, std::vector<Link> links,
                           ChannelParams channel, double edge_density)
    : nodes_(std::move(nodes)),
      links_(std::move(links)),
      channel_(channel),
      edge_density_(edge_density) {
  require(channel_.bits_per_element > 0, "InvalidChannel", "bits_per_element must be positive");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    require(nodes_[i].id == static_cast<NodeId>(i), "InvalidGraph", "node ids must be 0..V-1");
    require(std::isfinite(nodes_[i].coords.x) && std::isfinite(nodes_[i].coords.y),
            "InvalidGraph", "non-finite coordinates");
    if (nodes_[i].kind == NodeKind::Participant) participants_.push_back(nodes_[i].id);
  }
  require(participants_.size() >= 2, "InvalidGraph", "need at least two participants");

  adjacency_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < links_.size(); ++i) {
    Link& l = links_[i];
    require(l.m != l.n, "InvalidGraph", "self-loop");
    require(l.m >= 0 && l.n >= 0 && static_cast<std::size_t>(std::max(l.m, l.n)) < nodes_.size(),
            "InvalidGraph", "link endpoint out of range");
    require(l.bit_success > 0.0 && l.bit_success <= 1.0, "InvalidGraph",
            "bit success must lie in (0, 1]");
    if (l.m > l.n) std::swap(l.m, l.n);
    require(!link_between(l.m, l.n), "InvalidGraph", "duplicate link");
    adjacency_[l.m].push_back({l.n, i});
    adjacency_[l.n].push_back({l.m, i});
  }
  for (auto& adj : adjacency_)
    std::sort(adj.begin(), adj.end(), [](auto& a, auto& b) { return a.node < b.node; });
  require(is_connected(nodes_.size(), links_), "ConnectivityFailure", "graph is not connected");
}

std::optional<std::size_t> NetworkGraph::link_between(NodeId a, NodeId b) const {
  for (const auto& adj : adjacency_.at(a))
    if (adj.node == b) return adj.link;
  return std::nullopt;
}

std::size_t NetworkGraph::participant_link_count() const {
  return static_cast<std::size_t>(std::count_if(links_.begin(), links_.end(), [&](const Link& l) {
    return is_participant(l.m) && is_participant(l.n);
  }));
}

int NetworkGraph::participant_max_degree() const {
  int best = 0;
  for (NodeId v : participants_) {
    int d = 0;
    for (const auto& adj : adjacency_[v]) d += is_participant(adj.node) ? 1 : 0;
    best = std::max(best, d);
  }
  return best;
}

NetworkGraph NetworkGraph::error_free() const {
  std::vector<Link> links = links_;
  for (Link& l : links) l.bit_success = 1.0;
  return NetworkGraph(nodes_, std::move(links), channel_, edge_density_);
}

namespace {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Closest-pairs selection without the connectivity check, so that the
// random builders can retry instead of throwing.
std::pair<std::vector<Node>, std::vector<Link>> assemble(std::span<const Point> participants,
                                                         std::span<const Point> relays,
                                                         double edge_density,
                                                         const ChannelParams& channel) {
  require(edge_density > 0.0 && edge_density <= 1.0, "InvalidDensity",
          "edge density must lie in (0, 1]");
  const std::size_t n = participants.size();
  require(n >= 2, "InvalidGraph", "need at least two participants");
  const std::size_t wanted = density_link_count(n, edge_density);
  require(wanted >= n - 1, "InvalidDensity",
          "density yields " + std::to_string(wanted) + " links, fewer than N-1");

  std::vector<Node> nodes;
  for (std::size_t i = 0; i < n; ++i)
    nodes.push_back({static_cast<NodeId>(i), participants[i], NodeKind::Participant});
  for (std::size_t r = 0; r < relays.size(); ++r)
    nodes.push_back({static_cast<NodeId>(n + r), relays[r], NodeKind::Relay});

  std::vector<std::tuple<double, NodeId, NodeId>> pairs;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      pairs.emplace_back(distance(participants[a], participants[b]), static_cast<NodeId>(a),
                         static_cast<NodeId>(b));
  std::sort(pairs.begin(), pairs.end());

  std::vector<Link> links;
  double coverage = 0.0;
  for (std::size_t i = 0; i < wanted; ++i) {
    const auto [d, a, b] = pairs[i];
    links.push_back(make_link(a, b, d, channel));
    coverage = std::max(coverage, d);
  }
  for (std::size_t r = 0; r < relays.size(); ++r) {
    const NodeId rid = static_cast<NodeId>(n + r);
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      if (static_cast<NodeId>(v) == rid) continue;
      if (nodes[v].kind == NodeKind::Relay && static_cast<NodeId>(v) < rid) continue;
      const double d = distance(relays[r], nodes[v].coords);
      if (d <= coverage && d > 0.0) links.push_back(make_link(rid, static_cast<NodeId>(v), d, channel));
    }
  }
  return {std::move(nodes), std::move(links)};
}

}  // namespace

NetworkGraph build_from_coordinates(std::span<const Point> participants,
                                    std::span<const Point> relays, double edge_density,
                                    const ChannelParams& channel) {
  auto [nodes, links] = assemble(participants, relays, edge_density, channel);
  return NetworkGraph(std::move(nodes), std::move(links), channel, edge_density);
}

NetworkGraph build_random_geometric(std::size_t n_participants, std::size_t n_relays,
                                    double area_m2, double edge_density, std::uint64_t seed,
                                    const ChannelParams& channel, int max_attempts) {
  require(area_m2 > 0.0, "DomainError", "area must be positive");
  const double side = std::sqrt(area_m2);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Rng rng(derive_seed(seed, "topology", {static_cast<std::uint64_t>(attempt)}));
    std::vector<Point> parts(n_participants), relays(n_relays);
    for (auto& p : parts) p = {rng.uniform(0.0, side), rng.uniform(0.0, side)};
    for (auto& p : relays) p = {rng.uniform(0.0, side), rng.uniform(0.0, side)};
    auto [nodes, links] = assemble(parts, relays, edge_density, channel);
    if (is_connected(nodes.size(), links))
      return NetworkGraph(std::move(nodes), std::move(links), channel, edge_density);
  }
  throw Error("ConnectivityFailure", "no connected topology within " +
                                         std::to_string(max_attempts) + " attempts");
}

NetworkGraph build_with_random_relays(std::span<const Point> participants, std::size_t n_relays,
                                      Point lo, Point hi, double edge_density, std::uint64_t seed,
                                      const ChannelParams& channel, int max_attempts) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Rng rng(derive_seed(seed, "relays", {static_cast<std::uint64_t>(attempt)}));
    std::vector<Point> relays(n_relays);
    for (auto& p : relays) p = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
    auto [nodes, links] = assemble(participants, relays, edge_density, channel);
    if (is_connected(nodes.size(), links))
      return NetworkGraph(std::move(nodes), std::move(links), channel, edge_density);
  }
  throw Error("ConnectivityFailure", "no connected relay placement within " +
                                         std::to_string(max_attempts) + " attempts");
}

std::vector<Point> reference_coordinates() {
  return {{2196, 1351}, {3637, 3127}, {2642, 284},  {2884, 848},  {5254, 596},
          {1730, 1923}, {3572, 2668}, {4546, 5326}, {4328, 4001}, {2534, 5171}};
}

}  // namespace radfl::net
