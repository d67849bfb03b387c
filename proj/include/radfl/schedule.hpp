#pragma once

#include "radfl/netmodel.hpp"
#include "radfl/routing.hpp"

#include <string>
#include <vector>

namespace radfl::routing {

/// Payload id of the aggregated model the C-FL aggregator sends back.
inline constexpr int kGlobalPayload = -1;

/// One physical broadcast: `transmitter` sends the payload originating at
/// participant `payload_source` to all `receivers` at once.
struct Transmission {
  NodeId transmitter = 0;
  int payload_source = 0;
  std::vector<NodeId> receivers;
  int slot = -1;
};

struct SlotSchedule {
  std::vector<Transmission> transmissions;
  int total_slots = 0;
  double total_traffic_bits = 0.0;
};

/// Two broadcasts conflict when they share a transmitter, when either
/// transmitter is adjacent to (or is) the other's transmitter or one of its
/// receivers, or when they share a receiver.
bool conflicts(const Transmission& a, const Transmission& b, const net::NetworkGraph& graph);

/// Greedy coloring of the conflict graph, highest conflict degree first
/// (ties by transmitter id, then payload).
void color_transmissions(std::vector<Transmission>& transmissions, const net::NetworkGraph& graph);

/// Per-hop transmissions of every participant's model along `plan`, with one
/// broadcast per (node, payload).
SlotSchedule schedule_route_and_aggregate(const RoutePlan& plan, const net::NetworkGraph& graph,
                                          double model_size_bits);

/// Uplink of every non-aggregator model to `aggregator` (participant index),
/// plus the downlink of the global model when `include_downlink`.
SlotSchedule schedule_centralized(const RoutePlan& plan, const net::NetworkGraph& graph,
                                  std::size_t aggregator, double model_size_bits,
                                  bool include_downlink = true);

/// Closed form for gossip flooding: J (d_max + 1) slots and J N broadcasts
/// of the model. No per-broadcast assignment is produced.
SlotSchedule schedule_gossip(const net::NetworkGraph& graph, int rounds_j, double model_size_bits);

/// True when no slot holds two conflicting broadcasts.
bool schedule_is_valid(const SlotSchedule& schedule, const net::NetworkGraph& graph);

/// CSV rows: slot,transmitter,payload_source,receivers (receivers joined by ';').
std::string schedule_csv(const SlotSchedule& schedule);

}  // namespace radfl::routing
