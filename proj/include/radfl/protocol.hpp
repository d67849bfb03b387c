#pragma once

#include "radfl/learning.hpp"
#include "radfl/netmodel.hpp"
#include "radfl/routing.hpp"
#include "radfl/seeding.hpp"
#include "radfl/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace radfl::protocol {

enum class Scheme { CoeffNormalization, ModelSubstitution };
enum class Kind { RouteAndAggregate, Gossip, Centralized };

const char* to_string(Scheme s);
const char* to_string(Kind k);
Scheme parse_scheme(const std::string& name);
Kind parse_kind(const std::string& name);

/// e(m, n, l): segment l of source m arrived intact at receiver n.
class SuccessTensor {
 public:
  SuccessTensor() = default;
  SuccessTensor(std::size_t clients, Eigen::Index segments);

  std::size_t clients() const { return n_; }
  Eigen::Index segments() const { return segments_; }

  bool operator()(std::size_t m, std::size_t n, Eigen::Index l) const { return bits_[index(m, n, l)] != 0; }
  void set(std::size_t m, std::size_t n, Eigen::Index l, bool ok);

 private:
  std::size_t index(std::size_t m, std::size_t n, Eigen::Index l) const {
    return (m * n_ + n) * static_cast<std::size_t>(segments_) + static_cast<std::size_t>(l);
  }
  std::size_t n_ = 0;
  Eigen::Index segments_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// One Bernoulli(rho(m, n)) draw per off-diagonal (m, n, l), in m, n, l order.
/// The diagonal is fixed at 1 and consumes no draws.
SuccessTensor sample_successes(const MatrixXd& rho, Eigen::Index segments, Rng& rng);

/// Draws from `plan` one uniform per element and pair, in m, n, element
/// order. An element survives with the single-element route success and a
/// segment arrives when all of its elements survive, so a segment of s
/// elements arrives with the route success for s elements.
SuccessTensor sample_successes(const routing::RoutePlan& plan, Eigen::Index model_dim, Rng& rng);

/// Matrix C with w_n(l) = sum_m C(m, n) omega_m(l) for one segment.
/// CoeffNormalization: C(m, n) = p_m e / sum_k p_k e_{k,n,l}.
/// ModelSubstitution: C(m, n) = p_m e, failed mass added to C(n, n).
MatrixXd coefficient_matrix(std::span<const double> p, const SuccessTensor& e, Eigen::Index l,
                            Scheme scheme);

/// Applies per-segment coefficient matrices to the trained models, summing in
/// ascending source order.
std::vector<VectorXd> apply_coefficients(std::span<const VectorXd> models,
                                         std::span<const MatrixXd> coefficients, int segment_size);

/// Per-client aggregate of `models` under `e` (one matrix per segment).
std::vector<VectorXd> aggregate_raa(std::span<const VectorXd> models, std::span<const double> p,
                                    const SuccessTensor& e, Scheme scheme, int segment_size);

/// Models at the start of round t (w_n^{t-1}) plus the training settings.
struct TrainState {
  int round = 0;
  std::vector<VectorXd> models;
  double learning_rate = 0.0;
  int epochs = 1;
};

/// Every client starts from `initial`. For quadratic tasks the learning rate
/// must lie in (0, 1/(2L)).
TrainState initial_state(const learning::Task& task, const VectorXd& initial, double learning_rate,
                         int epochs);

struct Overhead {
  int slots = 0;
  double traffic_bits = 0.0;
};

struct RoundOutcome {
  int round = 0;
  std::vector<VectorXd> trained;     // omega_{n,I}
  VectorXd virtual_average;          // sum_n p_n omega_{n,I}
  std::vector<VectorXd> aggregated;  // w_n^t
  std::vector<MatrixXd> coefficients;  // C_l per segment
  std::optional<SuccessTensor> successes;  // R&A only
  Overhead overhead;
};

/// Local training of every client from its current model.
std::vector<VectorXd> train_all(const TrainState& state, const learning::Task& task);

/// sum_n p_n models[n], ascending n.
VectorXd weighted_average(std::span<const VectorXd> models, std::span<const double> p);

RoundOutcome run_round_raa(TrainState& state, const learning::Task& task,
                           const routing::RoutePlan& plan, Scheme scheme, Rng& rng,
                           Overhead overhead = {});

/// J one-hop broadcast-and-aggregate iterations among participants. `elements`
/// is the packet length K.
RoundOutcome run_round_aayg(TrainState& state, const learning::Task& task,
                            const net::NetworkGraph& graph, int rounds_j, int elements,
                            Scheme scheme, Rng& rng, Overhead overhead = {});

/// Uplink to `aggregator` (participant index), aggregation there, downlink of
/// the global model. A client whose downlink segment fails keeps its own
/// freshly trained segment.
RoundOutcome run_round_cfl(TrainState& state, const learning::Task& task,
                           const routing::RoutePlan& plan, std::size_t aggregator, Scheme scheme,
                           Rng& rng, Overhead overhead = {});

struct RoundMetrics {
  std::vector<double> client_loss;  // F(w_n^t)
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;       // NaN for quadratic tasks
  double max_pairwise_distance = 0.0;
  double mean_bias_norm_sq = 0.0;   // spectral, averaged over segments
  double virtual_distance = 0.0;    // ||omega_bar_I - w*||, NaN without an optimum
};

RoundMetrics evaluate(const learning::Task& task, const RoundOutcome& outcome,
                      const VectorXd* optimum = nullptr);

}  // namespace radfl::protocol
