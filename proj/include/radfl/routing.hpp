#pragma once

#include "radfl/netmodel.hpp"
#include "radfl/types.hpp"

#include <climits>
#include <span>
#include <utility>
#include <vector>

namespace radfl::routing {

/// A simple path with its per-hop packet success rates. Paths are ranked by
/// (canonical product desc, hop count asc, node sequence lexicographic asc);
/// the canonical product multiplies the per-hop rates in ascending order, so
/// two paths with the same multiset of hop rates always compare equal on it.
struct Path {
  std::vector<NodeId> nodes;       // source first, destination last
  std::vector<double> hop_success; // sorted ascending
  double success = 1.0;            // canonical product

  std::size_t hops() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  bool empty() const { return nodes.empty(); }
};

bool better(const Path& a, const Path& b);
/// Canonical product of a multiset of per-hop rates.
double canonical_product(std::vector<double> rates);
/// Path over `nodes` in `graph` for packets of `elements` elements.
Path make_path(const net::NetworkGraph& graph, std::vector<NodeId> nodes, int elements);

struct Route {
  std::vector<NodeId> hops;          // m ... n; empty for m == n or unreachable
  std::vector<double> hop_bit_success; // per hop, in path order
  double e2e_success = 1.0;
  bool reachable = true;
};

/// Routes between every ordered pair of participants (participant indices
/// 0..N-1). Hops are graph node ids and may traverse relays.
class RoutePlan {
 public:
  RoutePlan() = default;
  RoutePlan(std::vector<NodeId> participants, int elements, int bits_per_element);

  std::size_t size() const { return participants_.size(); }
  int elements() const { return elements_; }
  int bits_per_element() const { return bits_per_element_; }
  const std::vector<NodeId>& participants() const { return participants_; }

  const Route& route(std::size_t src, std::size_t dst) const { return routes_[src * size() + dst]; }
  Route& route(std::size_t src, std::size_t dst) { return routes_[src * size() + dst]; }

  double success(std::size_t src, std::size_t dst) const { return route(src, dst).e2e_success; }
  /// N x N matrix of E2E success, entry (m, n) = source m to receiver n.
  MatrixXd success_matrix() const;
  /// E2E success of a segment carrying `elements` elements along the stored
  /// route (used for the ragged last segment).
  double segment_success(std::size_t src, std::size_t dst, int elements) const;

  /// Replace every E2E success by 1 (keeps hops).
  RoutePlan error_free() const;

 private:
  std::vector<NodeId> participants_;
  int elements_ = 1;
  int bits_per_element_ = 32;
  std::vector<Route> routes_;
};

/// All-pairs best routes by Floyd-Warshall over -log packet success.
RoutePlan min_per_routes(const net::NetworkGraph& graph, int elements);

/// Exhaustive simple-path enumeration; limited to 8 nodes.
RoutePlan brute_force_routes(const net::NetworkGraph& graph, int elements);

/// Every simple path from `src` to `dst` (graph node ids), in DFS order.
std::vector<Path> enumerate_simple_paths(const net::NetworkGraph& graph, NodeId src, NodeId dst,
                                         int elements);

struct BandwidthBudget {
  static constexpr int unlimited = INT_MAX;
  /// Maximum number of broadcasts per round, indexed by graph node id.
  std::vector<int> max_transmissions;

  static BandwidthBudget unlimited_for(const net::NetworkGraph& graph) {
    return {std::vector<int>(graph.num_nodes(), unlimited)};
  }
};

struct AdmissionResult {
  RoutePlan plan;
  /// (src, dst) participant-index pairs with no feasible route (InfeasibleBudget).
  std::vector<std::pair<std::size_t, std::size_t>> infeasible;
  /// Budgets left after admission.
  std::vector<int> residual;
};

/// Sources are admitted in decreasing p (ties by index). Each source gets the
/// homologous route set minimizing sum_n (1 - rho_{m,n}) over nodes whose
/// residual budget is at least one; every node that transmits the source's
/// payload (including the source) then spends one unit.
AdmissionResult constrained_admission(const net::NetworkGraph& graph,
                                      const BandwidthBudget& budgets, std::span<const double> p,
                                      int elements);

/// sum_n sum_m (1 - rho_{m,n}) (p_m^2 + p_m).
double routing_objective(const RoutePlan& plan, std::span<const double> p);
double routing_objective(const MatrixXd& success, std::span<const double> p);

}  // namespace radfl::routing
