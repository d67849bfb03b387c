#pragma once

#include "radfl/types.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace radfl::net {

enum class NodeKind { Participant, Relay };
enum class Modulation { BPSK, QPSK };

/// Unit in which the carrier enters the 20log10(f_c) path-loss term.
/// The formula is stated for GHz; MHz is kept as an opt-in convention
/// because at GHz the reference geometry yields error-free links.
enum class FrequencyUnit { GHz, MHz };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Node {
  NodeId id = 0;
  Point coords;
  NodeKind kind = NodeKind::Participant;
};

struct ChannelParams {
  double carrier_ghz = 2.5;
  double bandwidth_hz = 30e6;
  double tx_power_dbm = 20.0;
  double noise_psd_dbm_hz = -174.0;
  Modulation modulation = Modulation::BPSK;
  int bits_per_element = 32;
  FrequencyUnit frequency_unit = FrequencyUnit::GHz;

  double noise_floor_dbm() const { return noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz); }
  /// Carrier in the unit selected by `frequency_unit`.
  double carrier_in_formula_unit() const {
    return frequency_unit == FrequencyUnit::GHz ? carrier_ghz : carrier_ghz * 1e3;
  }
};

struct Link {
  NodeId m = 0;
  NodeId n = 0;
  double distance_m = 0.0;
  double path_loss_db = 0.0;
  double snr_linear = 0.0;
  double bit_success = 1.0;

  NodeId other(NodeId v) const { return v == m ? n : m; }
};

// -- channel chain ---------------------------------------------------------

/// 20 log10(f_c) + 20 log10(d) + 32.4, d in km.
template <typename Scalar>
Scalar path_loss_db(Scalar distance_km, Scalar carrier) {
  using std::log10;
  require(distance_km > Scalar(0), "DomainError", "path loss needs a positive distance");
  return Scalar(20) * log10(carrier) + Scalar(20) * log10(distance_km) + Scalar(32.4);
}

template <typename Scalar>
Scalar snr_linear(const ChannelParams& params, Scalar loss_db) {
  using std::pow;
  const Scalar snr_db = Scalar(params.tx_power_dbm) - loss_db - Scalar(params.noise_floor_dbm());
  return pow(Scalar(10), snr_db / Scalar(10));
}

/// Gaussian tail Q(x) = erfc(x / sqrt 2) / 2.
template <typename Scalar>
Scalar q_function(Scalar x) {
  using std::erfc;
  using std::sqrt;
  return Scalar(0.5) * erfc(x / sqrt(Scalar(2)));
}

/// Bit success rate 1 - Q(sqrt(2 snr)). BPSK and QPSK share the expression.
template <typename Scalar>
Scalar bit_success_rate(Scalar snr, Modulation = Modulation::BPSK) {
  using std::sqrt;
  require(snr >= Scalar(0), "DomainError", "negative SNR");
  return Scalar(1) - q_function(sqrt(Scalar(2) * snr));
}

/// eps^(bits_per_element * elements).
template <typename Scalar>
Scalar packet_success_rate(Scalar bit_success, int elements, int bits_per_element = 32) {
  using std::pow;
  require(elements >= 1, "DomainError", "packet needs at least one element");
  return pow(bit_success, Scalar(bits_per_element) * Scalar(elements));
}

/// Full chain for one hop of length `distance_m`.
Link make_link(NodeId m, NodeId n, double distance_m, const ChannelParams& params);

// -- graph -----------------------------------------------------------------

class NetworkGraph {
 public:
  struct Adjacent {
    NodeId node;
    std::size_t link;
  };

  /// Validates ids, symmetry, self-loops and connectivity.
  NetworkGraph(std::vector<Node> nodes, std::vector<Link> links, ChannelParams channel,
               double edge_density = 1.0);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_participants() const { return participants_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  const ChannelParams& channel() const { return channel_; }
  double edge_density() const { return edge_density_; }

  /// Participant node ids in ascending order; participant index i maps to
  /// participants()[i]. Builders place participants first, so the mapping
  /// is the identity for every graph they produce.
  const std::vector<NodeId>& participants() const { return participants_; }
  bool is_participant(NodeId v) const { return nodes_.at(v).kind == NodeKind::Participant; }

  const std::vector<Adjacent>& neighbors(NodeId v) const { return adjacency_.at(v); }
  std::optional<std::size_t> link_between(NodeId a, NodeId b) const;
  bool adjacent(NodeId a, NodeId b) const { return link_between(a, b).has_value(); }

  /// Packet success of a link for a packet of `elements` elements.
  double packet_success(std::size_t link, int elements) const {
    return packet_success_rate(links_[link].bit_success, elements, channel_.bits_per_element);
  }

  std::size_t participant_link_count() const;
  /// Max degree over the subgraph induced by participants.
  int participant_max_degree() const;

  /// Same nodes, every bit success forced to 1.
  NetworkGraph error_free() const;

 private:
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  ChannelParams channel_;
  double edge_density_;
  std::vector<NodeId> participants_;
  std::vector<std::vector<Adjacent>> adjacency_;
};

bool is_connected(std::size_t num_nodes, std::span<const Link> links);

/// round(rho * N (N-1) / 2), ties to even.
std::size_t density_link_count(std::size_t n_participants, double edge_density);

/// Participants connect along their round(rho N(N-1)/2) closest pairs (ties by
/// id pair). Relays connect to every node within the longest selected
/// participant link. Participants get ids 0..N-1, relays N..N+R-1.
NetworkGraph build_from_coordinates(std::span<const Point> participants,
                                    std::span<const Point> relays, double edge_density,
                                    const ChannelParams& channel);

/// Uniform coordinates in a square of the given area; retries up to
/// `max_attempts` derived sub-seeds until the graph is connected.
NetworkGraph build_random_geometric(std::size_t n_participants, std::size_t n_relays,
                                    double area_m2, double edge_density, std::uint64_t seed,
                                    const ChannelParams& channel = {}, int max_attempts = 100);

/// Fixed participants, relays uniform over [lo, hi]; retries relay placement.
NetworkGraph build_with_random_relays(std::span<const Point> participants, std::size_t n_relays,
                                      Point lo, Point hi, double edge_density, std::uint64_t seed,
                                      const ChannelParams& channel = {}, int max_attempts = 100);

/// Client coordinates (m) of the ten-node reference network.
std::vector<Point> reference_coordinates();

}  // namespace radfl::net
