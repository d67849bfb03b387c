#pragma once

#include "radfl/io.hpp"
#include "radfl/netmodel.hpp"
#include "radfl/protocol.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace radfl::experiment {

struct TopologySpec {
  std::string kind = "coordinates";  // coordinates | random | graph
  std::vector<net::Point> coordinates;  // empty means the reference table
  double scale = 1.0;                   // multiplies every coordinate
  std::size_t participants = 10;        // random only
  double area_m2 = 1e6;                 // random only
  std::vector<double> densities{0.5};
  std::vector<std::size_t> relays{0};
  bool error_free = false;
  std::optional<io::Json> graph;        // graph only
};

struct TaskSpec {
  std::string kind = "quadratic";  // quadratic | logistic | mlp
  Eigen::Index dim = 32;           // quadratic only
  double heterogeneity = 1.0;
  double eig_lo = 0.5;
  double eig_hi = 2.0;
  Eigen::Index features = 15;
  int hidden = 8;
  double l2 = 1e-2;
  int min_samples = 20;
  int max_samples = 100;
  double learning_rate = 0.1;
  int epochs = 5;
};

struct ProtocolSpec {
  protocol::Kind kind = protocol::Kind::RouteAndAggregate;
  protocol::Scheme scheme = protocol::Scheme::CoeffNormalization;
  int rounds_j = 1;               // gossip only
  std::size_t aggregator = 0;     // centralized only (participant index)
  bool downlink_traffic = true;   // centralized only
  bool error_free = false;        // run this protocol on the error-free plan

  /// "raa", "aayg-J5", "cfl-a6", with "-ef" appended when error_free.
  std::string label() const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t root_seed = 1;
  int rounds = 50;
  int replications = 1;
  std::vector<int> packet_lengths{1};
  TopologySpec topology;
  net::ChannelParams channel;
  TaskSpec task;
  std::vector<ProtocolSpec> protocols;
  std::optional<double> model_size_bits;  // default 32 bits per parameter
  bool bounds = true;
  std::optional<double> tau;              // default max (1 - rho)
  std::string output = "out";
};

/// Validates everything before any computation; ConfigError messages carry
/// "origin:line:".
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "config");
io::Json to_json(const ExperimentConfig& config);
/// FNV-1a of the canonical JSON form with the root seed left out.
std::uint64_t config_hash(const ExperimentConfig& config);

std::vector<std::string> recipe_names();
/// JSON text of a canned recipe; throws ConfigError for unknown names.
std::string recipe_text(const std::string& name);
ExperimentConfig recipe(const std::string& name);

struct RunSummary {
  std::string protocol;
  std::string scheme;
  int K = 0;
  std::size_t relays = 0;
  double density = 0.0;
  std::vector<double> final_mean_loss;           // per replication
  std::vector<double> final_median_client_loss;  // per replication
  std::vector<double> final_max_distance;        // per replication
  double median_final_loss = 0.0;                // over replications of final_mean_loss
  int slots_per_round = 0;
  double traffic_bits_per_round = 0.0;
  /// Largest |w_n^t - reference w_n^t| over clients, rounds and replications,
  /// where the reference is the first protocol of the sweep point.
  double max_trajectory_divergence = 0.0;
};

struct ExperimentResult {
  std::vector<RunSummary> runs;
  std::string metrics_csv;
  io::Json summary;
  io::Json bounds;
  io::Json routes;
};

/// Runs every (density, relays, K, protocol) point for every replication.
/// Replications run on up to `jobs` threads; output does not depend on it.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

/// metrics.csv, summary.json, bounds.json, routes.json under `dir`.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

struct AggregatorScore {
  std::size_t aggregator = 0;
  double final_loss = 0.0;
};

/// Runs the first centralized protocol once per candidate aggregator and
/// ranks by median final mean loss (ties by index).
std::vector<AggregatorScore> sweep_aggregator(const ExperimentConfig& config, int jobs = 1);

}  // namespace radfl::experiment
