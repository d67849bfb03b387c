#include "radfl/routing.hpp"

#include <algorithm>
#include <numeric>

namespace radfl::routing {

double canonical_product(std::vector<double> rates) {
  std::sort(rates.begin(), rates.end());
  double prod = 1.0;
  for (double r : rates) prod *= r;
  return prod;
}

bool better(const Path& a, const Path& b) {
  if (b.empty()) return !a.empty();
  if (a.empty()) return false;
  if (a.hop_success != b.hop_success) {
    if (a.success != b.success) return a.success > b.success;
  }
  if (a.hops() != b.hops()) return a.hops() < b.hops();
  return std::lexicographical_compare(a.nodes.begin(), a.nodes.end(), b.nodes.begin(),
                                      b.nodes.end());
}

Path make_path(const net::NetworkGraph& graph, std::vector<NodeId> nodes, int elements) {
  Path path;
  path.nodes = std::move(nodes);
  for (std::size_t i = 0; i + 1 < path.nodes.size(); ++i) {
    const auto link = graph.link_between(path.nodes[i], path.nodes[i + 1]);
    require(link.has_value(), "InvalidPath", "consecutive path nodes are not adjacent");
    path.hop_success.push_back(graph.packet_success(*link, elements));
  }
  std::sort(path.hop_success.begin(), path.hop_success.end());
  path.success = 1.0;
  for (double r : path.hop_success) path.success *= r;
  return path;
}

RoutePlan::RoutePlan(std::vector<NodeId> participants, int elements, int bits_per_element)
    : participants_(std::move(participants)),
      elements_(elements),
      bits_per_element_(bits_per_element),
      routes_(participants_.size() * participants_.size()) {}

MatrixXd RoutePlan::success_matrix() const {
  const auto n = static_cast<Eigen::Index>(size());
  MatrixXd rho(n, n);
  for (Eigen::Index m = 0; m < n; ++m)
    for (Eigen::Index k = 0; k < n; ++k) rho(m, k) = success(m, k);
  return rho;
}

double RoutePlan::segment_success(std::size_t src, std::size_t dst, int elements) const {
  if (src == dst) return 1.0;
  const Route& r = route(src, dst);
  if (!r.reachable) return 0.0;
  if (elements == elements_) return r.e2e_success;
  std::vector<double> rates;
  for (double eps : r.hop_bit_success)
    rates.push_back(net::packet_success_rate(eps, elements, bits_per_element_));
  return canonical_product(std::move(rates));
}

RoutePlan RoutePlan::error_free() const {
  RoutePlan out = *this;
  for (Route& r : out.routes_) {
    if (!r.reachable) continue;
    r.e2e_success = 1.0;
    std::fill(r.hop_bit_success.begin(), r.hop_bit_success.end(), 1.0);
  }
  return out;
}

namespace {

bool is_simple_concat(const Path& a, const Path& b) {
  // a ends where b starts
  for (std::size_t i = 0; i + 1 < a.nodes.size(); ++i)
    if (std::find(b.nodes.begin(), b.nodes.end(), a.nodes[i]) != b.nodes.end()) return false;
  return true;
}

Path concat(const Path& a, const Path& b) {
  Path out;
  out.nodes = a.nodes;
  out.nodes.insert(out.nodes.end(), b.nodes.begin() + 1, b.nodes.end());
  out.hop_success.resize(a.hop_success.size() + b.hop_success.size());
  std::merge(a.hop_success.begin(), a.hop_success.end(), b.hop_success.begin(),
             b.hop_success.end(), out.hop_success.begin());
  out.success = 1.0;
  for (double r : out.hop_success) out.success *= r;
  return out;
}

Route to_route(const net::NetworkGraph& graph, const Path& path) {
  Route r;
  if (path.empty()) {
    r.reachable = false;
    r.e2e_success = 0.0;
    return r;
  }
  r.hops = path.nodes;
  for (std::size_t i = 0; i + 1 < path.nodes.size(); ++i)
    r.hop_bit_success.push_back(graph.links()[*graph.link_between(path.nodes[i], path.nodes[i + 1])].bit_success);
  r.e2e_success = path.success;
  return r;
}

RoutePlan collect(const net::NetworkGraph& graph, int elements,
                  const std::vector<std::vector<Path>>& best) {
  RoutePlan plan(graph.participants(), elements, graph.channel().bits_per_element);
  const auto& parts = graph.participants();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t j = 0; j < parts.size(); ++j) {
      if (i == j) continue;
      const Path& p = best[parts[i]][parts[j]];
      require(!p.empty(), "Unreachable", "no route between participants");
      plan.route(i, j) = to_route(graph, p);
    }
  }
  return plan;
}

}  // namespace

RoutePlan min_per_routes(const net::NetworkGraph& graph, int elements) {
  require(elements >= 1, "DomainError", "elements per packet must be >= 1");
  const std::size_t v = graph.num_nodes();
  std::vector<std::vector<Path>> best(v, std::vector<Path>(v));
  for (const auto& link : graph.links()) {
    best[link.m][link.n] = make_path(graph, {link.m, link.n}, elements);
    best[link.n][link.m] = make_path(graph, {link.n, link.m}, elements);
  }
  // Relaxation uses the full path order, so hop-count and lexicographic
  // ties are settled inside the recursion rather than after it.
  for (std::size_t k = 0; k < v; ++k) {
    for (std::size_t i = 0; i < v; ++i) {
      if (i == k || best[i][k].empty()) continue;
      for (std::size_t j = 0; j < v; ++j) {
        if (j == i || j == k || best[k][j].empty()) continue;
        if (!is_simple_concat(best[i][k], best[k][j])) continue;
        Path candidate = concat(best[i][k], best[k][j]);
        if (better(candidate, best[i][j])) best[i][j] = std::move(candidate);
      }
    }
  }
  return collect(graph, elements, best);
}

std::vector<Path> enumerate_simple_paths(const net::NetworkGraph& graph, NodeId src, NodeId dst,
                                         int elements) {
  std::vector<Path> out;
  std::vector<NodeId> stack{src};
  std::vector<bool> on_path(graph.num_nodes(), false);
  on_path[src] = true;
  auto dfs = [&](auto&& self, NodeId u) -> void {
    if (u == dst) {
      out.push_back(make_path(graph, stack, elements));
      return;
    }
    for (const auto& adj : graph.neighbors(u)) {
      if (on_path[adj.node]) continue;
      on_path[adj.node] = true;
      stack.push_back(adj.node);
      self(self, adj.node);
      stack.pop_back();
      on_path[adj.node] = false;
    }
  };
  if (src != dst) dfs(dfs, src);
  return out;
}

RoutePlan brute_force_routes(const net::NetworkGraph& graph, int elements) {
  require(graph.num_nodes() <= 8, "SizeLimit", "brute force is limited to 8 nodes");
  const std::size_t v = graph.num_nodes();
  std::vector<std::vector<Path>> best(v, std::vector<Path>(v));
  for (NodeId s : graph.participants())
    for (NodeId d : graph.participants()) {
      if (s == d) continue;
      for (Path& p : enumerate_simple_paths(graph, s, d, elements))
        if (better(p, best[s][d])) best[s][d] = std::move(p);
    }
  return collect(graph, elements, best);
}

namespace {

// Best paths from `src` where every transmitting node (all but the last on a
// path) satisfies `can_transmit`. Bellman-Ford style relaxation with the same
// path order as min_per_routes.
std::vector<Path> restricted_from(const net::NetworkGraph& graph, NodeId src, int elements,
                                  const std::vector<bool>& can_transmit) {
  const std::size_t v = graph.num_nodes();
  std::vector<Path> best(v);
  best[src] = make_path(graph, {src}, elements);
  if (!can_transmit[src]) return best;
  bool changed = true;
  for (std::size_t iter = 0; changed && iter < v; ++iter) {
    changed = false;
    for (std::size_t u = 0; u < v; ++u) {
      const Path& pu = best[u];
      if (pu.empty() || !can_transmit[u]) continue;
      for (const auto& adj : graph.neighbors(static_cast<NodeId>(u))) {
        if (adj.node == src) continue;
        if (std::find(pu.nodes.begin(), pu.nodes.end(), adj.node) != pu.nodes.end()) continue;
        Path candidate = pu;
        candidate.nodes.push_back(adj.node);
        const double rate = graph.packet_success(adj.link, elements);
        candidate.hop_success.insert(
            std::upper_bound(candidate.hop_success.begin(), candidate.hop_success.end(), rate),
            rate);
        candidate.success = 1.0;
        for (double r : candidate.hop_success) candidate.success *= r;
        if (better(candidate, best[adj.node])) {
          best[adj.node] = std::move(candidate);
          changed = true;
        }
      }
    }
  }
  return best;
}

}  // namespace

AdmissionResult constrained_admission(const net::NetworkGraph& graph,
                                      const BandwidthBudget& budgets, std::span<const double> p,
                                      int elements) {
  const auto& parts = graph.participants();
  require(p.size() == parts.size(), "DomainError", "one weight per participant required");
  require(budgets.max_transmissions.size() == graph.num_nodes(), "DomainError",
          "one budget per node required");
  for (int b : budgets.max_transmissions) require(b >= 0, "DomainError", "negative budget");

  AdmissionResult result;
  result.plan = RoutePlan(parts, elements, graph.channel().bits_per_element);
  result.residual = budgets.max_transmissions;

  std::vector<std::size_t> order(parts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });

  for (std::size_t m : order) {
    std::vector<bool> can_transmit(graph.num_nodes());
    for (std::size_t u = 0; u < graph.num_nodes(); ++u) can_transmit[u] = result.residual[u] >= 1;
    const auto best = restricted_from(graph, parts[m], elements, can_transmit);

    std::vector<bool> transmits(graph.num_nodes(), false);
    for (std::size_t n = 0; n < parts.size(); ++n) {
      if (n == m) continue;
      const Path& path = best[parts[n]];
      if (path.empty()) {
        result.infeasible.emplace_back(m, n);
        result.plan.route(m, n) = Route{{}, {}, 0.0, false};
        continue;
      }
      result.plan.route(m, n) = to_route(graph, path);
      for (std::size_t i = 0; i + 1 < path.nodes.size(); ++i) transmits[path.nodes[i]] = true;
    }
    for (std::size_t u = 0; u < graph.num_nodes(); ++u)
      if (transmits[u] && result.residual[u] != BandwidthBudget::unlimited) --result.residual[u];
  }
  return result;
}

double routing_objective(const MatrixXd& success, std::span<const double> p) {
  require(static_cast<std::size_t>(success.rows()) == p.size(), "DomainError",
          "weights and success matrix disagree");
  double total = 0.0;
  for (Eigen::Index n = 0; n < success.cols(); ++n)
    for (Eigen::Index m = 0; m < success.rows(); ++m)
      total += (1.0 - success(m, n)) * (p[m] * p[m] + p[m]);
  return total;
}

double routing_objective(const RoutePlan& plan, std::span<const double> p) {
  return routing_objective(plan.success_matrix(), p);
}

}  // namespace radfl::routing
