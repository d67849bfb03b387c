#include "radfl/schedule.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace radfl::routing {

namespace {

bool hears(NodeId listener, NodeId transmitter, const net::NetworkGraph& graph) {
  return listener == transmitter || graph.adjacent(listener, transmitter);
}

using TxKey = std::pair<NodeId, int>;

void add_route(std::map<TxKey, std::vector<NodeId>>& txs, const Route& route, int payload) {
  for (std::size_t i = 0; i + 1 < route.hops.size(); ++i) {
    auto& rx = txs[{route.hops[i], payload}];
    if (std::find(rx.begin(), rx.end(), route.hops[i + 1]) == rx.end())
      rx.push_back(route.hops[i + 1]);
  }
}

SlotSchedule finish(std::map<TxKey, std::vector<NodeId>>& txs, const net::NetworkGraph& graph,
                    double model_size_bits) {
  SlotSchedule s;
  for (auto& [key, rx] : txs) {
    std::sort(rx.begin(), rx.end());
    s.transmissions.push_back({key.first, key.second, rx, -1});
  }
  color_transmissions(s.transmissions, graph);
  for (const auto& t : s.transmissions) s.total_slots = std::max(s.total_slots, t.slot + 1);
  s.total_traffic_bits = model_size_bits * static_cast<double>(s.transmissions.size());
  return s;
}

}  // namespace

bool conflicts(const Transmission& a, const Transmission& b, const net::NetworkGraph& graph) {
  if (hears(a.transmitter, b.transmitter, graph)) return true;
  for (NodeId r : a.receivers)
    if (hears(r, b.transmitter, graph)) return true;
  for (NodeId r : b.receivers)
    if (hears(r, a.transmitter, graph)) return true;
  for (NodeId r : a.receivers)
    if (std::find(b.receivers.begin(), b.receivers.end(), r) != b.receivers.end()) return true;
  return false;
}

void color_transmissions(std::vector<Transmission>& txs, const net::NetworkGraph& graph) {
  const std::size_t n = txs.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (conflicts(txs[i], txs[j], graph)) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (adj[a].size() != adj[b].size()) return adj[a].size() > adj[b].size();
    if (txs[a].transmitter != txs[b].transmitter) return txs[a].transmitter < txs[b].transmitter;
    return txs[a].payload_source < txs[b].payload_source;
  });
  for (auto& t : txs) t.slot = -1;
  for (std::size_t i : order) {
    std::vector<bool> used(n + 1, false);
    for (std::size_t j : adj[i])
      if (txs[j].slot >= 0) used[txs[j].slot] = true;
    int slot = 0;
    while (used[slot]) ++slot;
    txs[i].slot = slot;
  }
}

SlotSchedule schedule_route_and_aggregate(const RoutePlan& plan, const net::NetworkGraph& graph,
                                          double model_size_bits) {
  require(model_size_bits > 0.0, "DomainError", "model size must be positive");
  std::map<TxKey, std::vector<NodeId>> txs;
  for (std::size_t m = 0; m < plan.size(); ++m)
    for (std::size_t n = 0; n < plan.size(); ++n)
      if (m != n) add_route(txs, plan.route(m, n), static_cast<int>(m));
  return finish(txs, graph, model_size_bits);
}

SlotSchedule schedule_centralized(const RoutePlan& plan, const net::NetworkGraph& graph,
                                  std::size_t aggregator, double model_size_bits,
                                  bool include_downlink) {
  require(model_size_bits > 0.0, "DomainError", "model size must be positive");
  require(aggregator < plan.size(), "DomainError", "aggregator out of range");
  std::map<TxKey, std::vector<NodeId>> txs;
  for (std::size_t m = 0; m < plan.size(); ++m) {
    if (m == aggregator) continue;
    add_route(txs, plan.route(m, aggregator), static_cast<int>(m));
    if (include_downlink) add_route(txs, plan.route(aggregator, m), kGlobalPayload);
  }
  return finish(txs, graph, model_size_bits);
}

SlotSchedule schedule_gossip(const net::NetworkGraph& graph, int rounds_j, double model_size_bits) {
  require(rounds_j >= 1, "DomainError", "J must be >= 1");
  require(model_size_bits > 0.0, "DomainError", "model size must be positive");
  SlotSchedule s;
  s.total_slots = rounds_j * (graph.participant_max_degree() + 1);
  s.total_traffic_bits =
      static_cast<double>(rounds_j) * static_cast<double>(graph.num_participants()) * model_size_bits;
  return s;
}

bool schedule_is_valid(const SlotSchedule& s, const net::NetworkGraph& graph) {
  for (std::size_t i = 0; i < s.transmissions.size(); ++i)
    for (std::size_t j = i + 1; j < s.transmissions.size(); ++j)
      if (s.transmissions[i].slot == s.transmissions[j].slot &&
          conflicts(s.transmissions[i], s.transmissions[j], graph))
        return false;
  return true;
}

std::string schedule_csv(const SlotSchedule& s) {
  std::vector<const Transmission*> rows;
  for (const auto& t : s.transmissions) rows.push_back(&t);
  std::stable_sort(rows.begin(), rows.end(), [](auto a, auto b) { return a->slot < b->slot; });
  std::ostringstream out;
  out << "slot,transmitter,payload_source,receivers\n";
  for (const auto* t : rows) {
    out << t->slot << ',' << t->transmitter << ',' << t->payload_source << ',';
    for (std::size_t i = 0; i < t->receivers.size(); ++i) out << (i ? ";" : "") << t->receivers[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace radfl::routing
