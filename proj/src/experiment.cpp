#include "radfl/experiment.hpp"

#include "radfl/analysis.hpp"
#include "radfl/learning.hpp"
#include "radfl/routing.hpp"
#include "radfl/schedule.hpp"
#include "radfl/seeding.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

namespace radfl::experiment {

using io::Json;

std::string ProtocolSpec::label() const {
  std::string s = protocol::to_string(kind);
  if (kind == protocol::Kind::Gossip) s += "-J" + std::to_string(rounds_j);
  if (kind == protocol::Kind::Centralized) s += "-a" + std::to_string(aggregator);
  if (error_free) s += "-ef";
  return s;
}

// -- config parsing ------------------------------------------------------------

namespace {

class Reader {
 public:
  Reader(const io::SourceMap& source, std::string origin) : source_(source), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    throw Error("ConfigError", origin_ + ":" + std::to_string(source_.line_of(pointer)) + ": " +
                                   (pointer.empty() ? "/" : pointer) + ": " + msg);
  }

  void keys(const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& pointer) const {
    io::check_keys(obj, allowed, pointer, source_, origin_);
  }

  template <class T>
  T as(const Json& v, const std::string& pointer) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(pointer, "expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(pointer, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (!v.is_number_unsigned()) fail(pointer, "expected a nonnegative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(pointer, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(pointer, "expected a string");
    }
    return v.get<T>();
  }

  template <class T>
  T get(const Json& obj, const std::string& key, const std::string& pointer, T fallback) const {
    const auto it = obj.find(key);
    return it == obj.end() ? fallback : as<T>(*it, pointer + "/" + key);
  }

  /// Accepts a scalar or an array of scalars.
  template <class T>
  std::vector<T> list(const Json& obj, const std::string& key, const std::string& pointer,
                      std::vector<T> fallback) const {
    const auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    const std::string at = pointer + "/" + key;
    if (!it->is_array()) return {as<T>(*it, at)};
    if (it->empty()) fail(at, "list must not be empty");
    std::vector<T> out;
    for (std::size_t i = 0; i < it->size(); ++i) out.push_back(as<T>((*it)[i], at + "/" + std::to_string(i)));
    return out;
  }

  void check(bool ok, const std::string& pointer, const std::string& msg) const {
    if (!ok) fail(pointer, msg);
  }

 private:
  const io::SourceMap& source_;
  std::string origin_;
};

std::size_t participant_count(const ExperimentConfig& c) {
  if (c.topology.kind == "random") return c.topology.participants;
  if (c.topology.kind == "graph") {
    std::size_t n = 0;
    for (const auto& node : c.topology.graph->at("nodes"))
      n += node.value("kind", std::string("participant")) == "participant";
    return n;
  }
  return c.topology.coordinates.empty() ? net::reference_coordinates().size() : c.topology.coordinates.size();
}

void parse_topology(const Reader& rd, const Json& j, TopologySpec& t) {
  const std::string at = "/topology";
  rd.keys(j, {"kind", "coordinates", "scale", "participants", "area_m2", "edge_density", "relays", "error_free", "graph"},
          at);
  t.kind = rd.get<std::string>(j, "kind", at, t.kind);
  rd.check(t.kind == "coordinates" || t.kind == "random" || t.kind == "graph", at + "/kind",
           "must be coordinates, random or graph");
  if (j.contains("coordinates")) {
    rd.check(t.kind == "coordinates", at + "/coordinates", "only valid for coordinates topologies");
    const auto& c = j.at("coordinates");
    if (c.is_string()) {
      rd.check(c.get<std::string>() == "reference", at + "/coordinates", "expected \"reference\" or a list of [x, y]");
    } else {
      rd.check(c.is_array() && c.size() >= 2, at + "/coordinates", "need at least two [x, y] points");
      for (std::size_t i = 0; i < c.size(); ++i) {
        const std::string p = at + "/coordinates/" + std::to_string(i);
        rd.check(c[i].is_array() && c[i].size() == 2, p, "expected [x, y]");
        const net::Point pt{rd.as<double>(c[i][0], p + "/0"), rd.as<double>(c[i][1], p + "/1")};
        rd.check(std::isfinite(pt.x) && std::isfinite(pt.y), p, "coordinates must be finite");
        t.coordinates.push_back(pt);
      }
    }
  }
  t.scale = rd.get<double>(j, "scale", at, t.scale);
  rd.check(t.scale > 0.0 && std::isfinite(t.scale), at + "/scale", "must be positive");
  t.participants = rd.get<std::size_t>(j, "participants", at, t.participants);
  rd.check(t.participants >= 2, at + "/participants", "need at least two participants");
  t.area_m2 = rd.get<double>(j, "area_m2", at, t.area_m2);
  rd.check(t.area_m2 > 0.0, at + "/area_m2", "must be positive");
  t.densities = rd.list<double>(j, "edge_density", at, t.densities);
  for (double d : t.densities) rd.check(d > 0.0 && d <= 1.0, at + "/edge_density", "must lie in (0, 1]");
  t.relays = rd.list<std::size_t>(j, "relays", at, t.relays);
  t.error_free = rd.get<bool>(j, "error_free", at, t.error_free);
  if (t.kind == "graph") {
    rd.check(j.contains("graph"), at, "graph topologies need a \"graph\" object");
    t.graph = j.at("graph");
    try {
      (void)io::graph_from_json(*t.graph);
    } catch (const Error& e) {
      rd.fail(at + "/graph", e.what());
    }
    rd.check(t.relays == std::vector<std::size_t>{0}, at + "/relays", "graph topologies take their relays from the graph");
  } else {
    rd.check(!j.contains("graph"), at + "/graph", "only valid for graph topologies");
  }
}

void parse_task(const Reader& rd, const Json& j, TaskSpec& t) {
  const std::string at = "/task";
  rd.keys(j, {"kind", "dim", "heterogeneity", "eig_lo", "eig_hi", "features", "hidden", "l2", "min_samples",
              "max_samples", "learning_rate", "epochs"},
          at);
  t.kind = rd.get<std::string>(j, "kind", at, t.kind);
  rd.check(t.kind == "quadratic" || t.kind == "logistic" || t.kind == "mlp", at + "/kind",
           "must be quadratic, logistic or mlp");
  t.dim = rd.get<Eigen::Index>(j, "dim", at, t.dim);
  rd.check(t.dim >= 1, at + "/dim", "must be >= 1");
  t.heterogeneity = rd.get<double>(j, "heterogeneity", at, t.heterogeneity);
  rd.check(t.heterogeneity >= 0.0, at + "/heterogeneity", "must be nonnegative");
  t.eig_lo = rd.get<double>(j, "eig_lo", at, t.eig_lo);
  t.eig_hi = rd.get<double>(j, "eig_hi", at, t.eig_hi);
  rd.check(t.eig_lo > 0.0, at + "/eig_lo", "must be positive");
  rd.check(t.eig_hi >= t.eig_lo, at + "/eig_hi", "must be >= eig_lo");
  t.features = rd.get<Eigen::Index>(j, "features", at, t.features);
  rd.check(t.features >= 1, at + "/features", "must be >= 1");
  t.hidden = rd.get<int>(j, "hidden", at, t.hidden);
  rd.check(t.hidden >= 1, at + "/hidden", "must be >= 1");
  t.l2 = rd.get<double>(j, "l2", at, t.l2);
  rd.check(t.l2 >= 0.0, at + "/l2", "must be nonnegative");
  t.min_samples = rd.get<int>(j, "min_samples", at, t.min_samples);
  t.max_samples = rd.get<int>(j, "max_samples", at, t.max_samples);
  rd.check(t.min_samples >= 1, at + "/min_samples", "must be >= 1");
  rd.check(t.max_samples >= t.min_samples, at + "/max_samples", "must be >= min_samples");
  t.learning_rate = rd.get<double>(j, "learning_rate", at, t.learning_rate);
  rd.check(t.learning_rate > 0.0, at + "/learning_rate", "must be positive");
  if (t.kind == "quadratic")
    rd.check(t.learning_rate < 1.0 / (2.0 * t.eig_hi), at + "/learning_rate", "must be below 1/(2L) = 1/(2 eig_hi)");
  t.epochs = rd.get<int>(j, "epochs", at, t.epochs);
  rd.check(t.epochs >= 1, at + "/epochs", "must be >= 1");
}

ProtocolSpec parse_protocol(const Reader& rd, const Json& j, const std::string& at, std::size_t participants) {
  rd.keys(j, {"kind", "scheme", "J", "aggregator", "downlink_traffic", "error_free"}, at);
  ProtocolSpec p;
  rd.check(j.contains("kind"), at, "missing \"kind\"");
  try {
    p.kind = protocol::parse_kind(rd.as<std::string>(j.at("kind"), at + "/kind"));
  } catch (const Error&) {
    rd.fail(at + "/kind", "must be raa, aayg or cfl");
  }
  if (j.contains("scheme")) {
    const std::string s = rd.as<std::string>(j.at("scheme"), at + "/scheme");
    rd.check(s == "coeff-normalization" || s == "model-substitution", at + "/scheme",
             "must be coeff-normalization or model-substitution");
    p.scheme = protocol::parse_scheme(s);
  }
  p.rounds_j = rd.get<int>(j, "J", at, p.rounds_j);
  rd.check(p.rounds_j >= 1, at + "/J", "must be >= 1");
  rd.check(!j.contains("J") || p.kind == protocol::Kind::Gossip, at + "/J", "only valid for aayg");
  p.aggregator = rd.get<std::size_t>(j, "aggregator", at, p.aggregator);
  rd.check(p.aggregator < participants, at + "/aggregator", "must be a participant index");
  rd.check(!j.contains("aggregator") || p.kind == protocol::Kind::Centralized, at + "/aggregator", "only valid for cfl");
  p.downlink_traffic = rd.get<bool>(j, "downlink_traffic", at, p.downlink_traffic);
  p.error_free = rd.get<bool>(j, "error_free", at, p.error_free);
  return p;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  const io::SourceMap source(text);
  const Json j = io::parse_json(text, origin);
  const Reader rd(source, origin);
  rd.keys(j, {"name", "root_seed", "rounds", "replications", "packet_lengths", "topology", "channel", "task",
              "protocols", "model_size_bits", "bounds", "tau", "output"},
          "");
  ExperimentConfig c;
  c.name = rd.get<std::string>(j, "name", "", c.name);
  c.root_seed = rd.get<std::uint64_t>(j, "root_seed", "", c.root_seed);
  c.rounds = rd.get<int>(j, "rounds", "", c.rounds);
  rd.check(c.rounds >= 1, "/rounds", "must be >= 1");
  c.replications = rd.get<int>(j, "replications", "", c.replications);
  rd.check(c.replications >= 1, "/replications", "must be >= 1");
  c.packet_lengths = rd.list<int>(j, "packet_lengths", "", c.packet_lengths);
  for (int k : c.packet_lengths) rd.check(k >= 1, "/packet_lengths", "every K must be >= 1");

  if (j.contains("topology")) parse_topology(rd, j.at("topology"), c.topology);
  if (j.contains("channel")) {
    const auto& ch = j.at("channel");
    rd.keys(ch, {"carrier_ghz", "bandwidth_hz", "tx_power_dbm", "noise_psd_dbm_hz", "modulation", "bits_per_element",
                 "frequency_unit"},
            "/channel");
    try {
      c.channel = io::channel_from_json(ch);
    } catch (const nlohmann::json::exception& e) {
      rd.fail("/channel", e.what());
    } catch (const Error& e) {
      rd.fail("/channel", e.what());
    }
  }
  if (j.contains("task")) parse_task(rd, j.at("task"), c.task);

  rd.check(j.contains("protocols"), "", "missing \"protocols\"");
  const auto& protos = j.at("protocols");
  rd.check(protos.is_array() && !protos.empty(), "/protocols", "must be a non-empty list");
  const std::size_t n = participant_count(c);
  for (std::size_t i = 0; i < protos.size(); ++i)
    c.protocols.push_back(parse_protocol(rd, protos[i], "/protocols/" + std::to_string(i), n));

  if (j.contains("model_size_bits")) {
    c.model_size_bits = rd.as<double>(j.at("model_size_bits"), "/model_size_bits");
    rd.check(*c.model_size_bits > 0.0, "/model_size_bits", "must be positive");
  }
  c.bounds = rd.get<bool>(j, "bounds", "", c.bounds);
  if (j.contains("tau")) {
    c.tau = rd.as<double>(j.at("tau"), "/tau");
    rd.check(*c.tau >= 0.0, "/tau", "must be nonnegative");
  }
  c.output = rd.get<std::string>(j, "output", "", c.output);
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json topo{{"kind", c.topology.kind}};
  if (c.topology.kind == "coordinates") {
    if (c.topology.coordinates.empty()) {
      topo["coordinates"] = "reference";
    } else {
      Json pts = Json::array();
      for (const auto& p : c.topology.coordinates) pts.push_back({p.x, p.y});
      topo["coordinates"] = std::move(pts);
    }
    topo["scale"] = c.topology.scale;
  }
  if (c.topology.kind == "random") {
    topo["participants"] = c.topology.participants;
    topo["area_m2"] = c.topology.area_m2;
  }
  if (c.topology.graph) topo["graph"] = *c.topology.graph;
  topo["edge_density"] = c.topology.densities;
  topo["relays"] = c.topology.relays;
  topo["error_free"] = c.topology.error_free;

  const auto& t = c.task;
  Json task{{"kind", t.kind}, {"heterogeneity", t.heterogeneity}, {"min_samples", t.min_samples},
            {"max_samples", t.max_samples}, {"learning_rate", t.learning_rate}, {"epochs", t.epochs}};
  if (t.kind == "quadratic") {
    task["dim"] = t.dim;
    task["eig_lo"] = t.eig_lo;
    task["eig_hi"] = t.eig_hi;
  } else {
    task["features"] = t.features;
    task["l2"] = t.l2;
    if (t.kind == "mlp") task["hidden"] = t.hidden;
  }

  Json protos = Json::array();
  for (const auto& p : c.protocols) {
    Json o{{"kind", protocol::to_string(p.kind)}, {"scheme", protocol::to_string(p.scheme)}};
    if (p.kind == protocol::Kind::Gossip) o["J"] = p.rounds_j;
    if (p.kind == protocol::Kind::Centralized) {
      o["aggregator"] = p.aggregator;
      o["downlink_traffic"] = p.downlink_traffic;
    }
    o["error_free"] = p.error_free;
    protos.push_back(std::move(o));
  }

  Json out{{"name", c.name},
           {"root_seed", c.root_seed},
           {"rounds", c.rounds},
           {"replications", c.replications},
           {"packet_lengths", c.packet_lengths},
           {"topology", std::move(topo)},
           {"channel", io::channel_to_json(c.channel)},
           {"task", std::move(task)},
           {"protocols", std::move(protos)}};
  if (c.model_size_bits) out["model_size_bits"] = *c.model_size_bits;
  out["bounds"] = c.bounds;
  if (c.tau) out["tau"] = *c.tau;
  out["output"] = c.output;
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("root_seed");
  j.erase("output");
  return fnv1a64(j.dump());
}

// -- recipes -------------------------------------------------------------------

namespace {

constexpr std::string_view kErrorFree = R"({
  "name": "errorfree-equivalence",
  "root_seed": 1,
  "rounds": 50,
  "replications": 1,
  "packet_lengths": [4],
  "topology": {"kind": "coordinates", "coordinates": "reference", "edge_density": 0.5, "error_free": true},
  "task": {"kind": "quadratic", "dim": 32, "learning_rate": 0.1, "epochs": 5},
  "protocols": [
    {"kind": "cfl", "aggregator": 6},
    {"kind": "raa", "scheme": "coeff-normalization"},
    {"kind": "raa", "scheme": "model-substitution"}
  ],
  "output": "out/errorfree-equivalence"
}
)";

constexpr std::string_view kOverhead = R"({
  "name": "overhead-table",
  "root_seed": 1,
  "rounds": 1,
  "replications": 1,
  "packet_lengths": [1],
  "topology": {"kind": "coordinates", "coordinates": "reference", "edge_density": [0.5, 0.9]},
  "task": {"kind": "quadratic", "dim": 32, "learning_rate": 0.1, "epochs": 1},
  "protocols": [
    {"kind": "raa"},
    {"kind": "aayg", "J": 1},
    {"kind": "aayg", "J": 5},
    {"kind": "cfl", "aggregator": 6, "downlink_traffic": true}
  ],
  "model_size_bits": 38720000,
  "bounds": false,
  "output": "out/overhead-table"
}
)";

constexpr std::string_view kRelaySweep = R"({
  "name": "relay-sweep",
  "root_seed": 1,
  "rounds": 100,
  "replications": 10,
  "packet_lengths": [16],
  "topology": {
    "kind": "coordinates",
    "coordinates": "reference",
    "scale": 2.0,
    "edge_density": 0.5,
    "relays": [0, 7, 14, 28]
  },
  "channel": {"frequency_unit": "MHz"},
  "task": {"kind": "quadratic", "dim": 32, "learning_rate": 0.1, "epochs": 5},
  "protocols": [
    {"kind": "raa", "scheme": "coeff-normalization"},
    {"kind": "cfl", "aggregator": 6, "error_free": true}
  ],
  "bounds": false,
  "output": "out/relay-sweep"
}
)";

}  // namespace

std::vector<std::string> recipe_names() { return {"errorfree-equivalence", "overhead-table", "relay-sweep"}; }

std::string recipe_text(const std::string& name) {
  if (name == "errorfree-equivalence") return std::string(kErrorFree);
  if (name == "overhead-table") return std::string(kOverhead);
  if (name == "relay-sweep") return std::string(kRelaySweep);
  throw Error("ConfigError", "unknown recipe '" + name + "'");
}

ExperimentConfig recipe(const std::string& name) { return parse_config(recipe_text(name), "recipe:" + name); }

// -- running -------------------------------------------------------------------

namespace {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == "StageFailure") throw;
    throw Error("StageFailure", std::string(name) + ": " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::vector<net::Point> scaled_coordinates(const TopologySpec& t) {
  auto pts = t.coordinates.empty() ? net::reference_coordinates() : t.coordinates;
  for (auto& p : pts) {
    p.x *= t.scale;
    p.y *= t.scale;
  }
  return pts;
}

net::NetworkGraph build_graph(const ExperimentConfig& c, int rep, std::size_t d, std::size_t relays) {
  const auto& t = c.topology;
  const double density = t.densities[d];
  const auto r = static_cast<std::uint64_t>(rep);
  auto graph = [&]() -> net::NetworkGraph {
    if (t.kind == "graph") return io::graph_from_json(*t.graph);
    if (t.kind == "random")
      return net::build_random_geometric(t.participants, relays, t.area_m2, density,
                                         derive_seed(c.root_seed, "topology", {r, d, relays}), c.channel);
    const auto pts = scaled_coordinates(t);
    if (relays == 0) return net::build_from_coordinates(pts, {}, density, c.channel);
    net::Point lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    return net::build_with_random_relays(pts, relays, lo, hi, density,
                                         derive_seed(c.root_seed, "relays", {r, d, relays}), c.channel);
  }();
  return t.error_free ? graph.error_free() : graph;
}

learning::Task build_task(const ExperimentConfig& c, std::size_t clients, int rep) {
  const auto& t = c.task;
  const std::uint64_t seed = derive_seed(c.root_seed, "task", {static_cast<std::uint64_t>(rep)});
  if (t.kind == "quadratic") {
    learning::QuadraticSpec s;
    s.clients = clients;
    s.dim = t.dim;
    s.eig_lo = t.eig_lo;
    s.eig_hi = t.eig_hi;
    s.heterogeneity = t.heterogeneity;
    s.min_samples = t.min_samples;
    s.max_samples = t.max_samples;
    return learning::generate_quadratic(s, seed);
  }
  learning::ClassifierSpec s;
  s.clients = clients;
  s.features = t.features;
  s.heterogeneity = t.heterogeneity;
  s.min_samples = t.min_samples;
  s.max_samples = t.max_samples;
  s.l2 = t.l2;
  s.hidden = t.hidden;
  return t.kind == "logistic" ? learning::generate_logistic(s, seed) : learning::generate_mlp(s, seed);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// sum_l ||W_l||^2 with W_l the N x K_l matrix of segment l
double segment_energy(const std::vector<VectorXd>& models, int k) {
  const Eigen::Index dim = models[0].size();
  double total = 0.0;
  for (Eigen::Index l = 0; l < learning::segment_count(dim, k); ++l) {
    const auto r = learning::segment_range(dim, k, l);
    MatrixXd w(static_cast<Eigen::Index>(models.size()), r.size);
    for (std::size_t n = 0; n < models.size(); ++n) w.row(static_cast<Eigen::Index>(n)) = models[n].segment(r.begin, r.size).transpose();
    total += analysis::spectral_norm_sq(w);
  }
  return total;
}

struct PointResult {
  double final_mean_loss = 0.0;
  double final_median_client_loss = 0.0;
  double final_max_distance = 0.0;
  routing::SlotSchedule overhead;
  double divergence = 0.0;
};

struct RepOutput {
  std::string rows;
  std::vector<PointResult> points;
  Json routes = Json::array();
  Json bounds = Json::array();
};

RepOutput run_replication(const ExperimentConfig& c, int rep) {
  RepOutput out;
  const auto& topo = c.topology;
  const std::size_t n = participant_count(c);
  const learning::Task task = stage("task", [&] { return build_task(c, n, rep); });
  const VectorXd w0 = learning::initial_model(task, derive_seed(c.root_seed, "init", {static_cast<std::uint64_t>(rep)}));
  std::optional<learning::TaskConstants> constants;
  if (task.quadratic()) constants = stage("task-constants", [&] { return learning::task_constants(task); });
  const VectorXd* optimum = constants ? &constants->optimum : nullptr;
  const double bits = c.model_size_bits.value_or(static_cast<double>(c.channel.bits_per_element) * static_cast<double>(task.dim()));

  for (std::size_t d = 0; d < topo.densities.size(); ++d)
    for (std::size_t relays : topo.relays) {
      const net::NetworkGraph graph = stage("topology", [&] { return build_graph(c, rep, d, relays); });
      require(graph.num_participants() == n, "StageFailure", "topology: participant count changed");
      for (int k : c.packet_lengths) {
        const routing::RoutePlan plan = stage("routing", [&] { return routing::min_per_routes(graph, k); });
        std::vector<std::vector<VectorXd>> reference;
        double energy_max = 0.0;
        for (std::size_t pi = 0; pi < c.protocols.size(); ++pi) {
          const ProtocolSpec& spec = c.protocols[pi];
          const routing::RoutePlan run_plan = spec.error_free ? plan.error_free() : plan;
          const net::NetworkGraph run_graph = spec.error_free ? graph.error_free() : graph;
          PointResult pr;
          pr.overhead = stage("scheduling", [&] {
            switch (spec.kind) {
              case protocol::Kind::RouteAndAggregate:
                return routing::schedule_route_and_aggregate(run_plan, graph, bits);
              case protocol::Kind::Gossip:
                return routing::schedule_gossip(graph, spec.rounds_j, bits);
              default:
                return routing::schedule_centralized(run_plan, graph, spec.aggregator, bits, spec.downlink_traffic);
            }
          });
          const protocol::Overhead overhead{pr.overhead.total_slots, pr.overhead.total_traffic_bits};
          protocol::TrainState state = stage("training", [&] {
            return protocol::initial_state(task, w0, c.task.learning_rate, c.task.epochs);
          });

          // loss streams leave out the scheme and K so those runs share draws
          std::string key = protocol::to_string(spec.kind);
          if (spec.kind == protocol::Kind::Gossip) key += "-J" + std::to_string(spec.rounds_j);
          if (spec.kind == protocol::Kind::Centralized) key += "-a" + std::to_string(spec.aggregator);

          double cum_bits = 0.0;
          long long cum_slots = 0;
          protocol::RoundMetrics metrics;
          for (int t = 1; t <= c.rounds; ++t) {
            Rng rng(derive_seed(c.root_seed, "loss",
                                {static_cast<std::uint64_t>(rep), d, relays, fnv1a64(key), static_cast<std::uint64_t>(t)}));
            const protocol::RoundOutcome o = stage("round", [&] {
              switch (spec.kind) {
                case protocol::Kind::RouteAndAggregate:
                  return protocol::run_round_raa(state, task, run_plan, spec.scheme, rng, overhead);
                case protocol::Kind::Gossip:
                  return protocol::run_round_aayg(state, task, run_graph, spec.rounds_j, k, spec.scheme, rng, overhead);
                default:
                  return protocol::run_round_cfl(state, task, run_plan, spec.aggregator, spec.scheme, rng, overhead);
              }
            });
            metrics = protocol::evaluate(task, o, optimum);
            cum_bits += o.overhead.traffic_bits;
            cum_slots += o.overhead.slots;
            if (pi == 0) {
              reference.push_back(o.aggregated);
              energy_max = std::max(energy_max, segment_energy(o.trained, k));
            } else {
              for (std::size_t i = 0; i < n; ++i)
                pr.divergence = std::max(pr.divergence, (o.aggregated[i] - reference[t - 1][i]).cwiseAbs().maxCoeff());
            }

            std::ostringstream row;
            row << rep << ',' << t << ',' << spec.label() << ',' << protocol::to_string(spec.scheme) << ',' << k << ','
                << relays << ',' << io::format_double(topo.densities[d]);
            for (double v : metrics.client_loss) row << ',' << io::format_double(v);
            row << ',' << io::format_double(metrics.mean_loss) << ',' << io::format_double(metrics.mean_accuracy) << ','
                << io::format_double(metrics.max_pairwise_distance) << ',' << io::format_double(metrics.mean_bias_norm_sq)
                << ',' << io::format_double(metrics.virtual_distance) << ',' << io::format_double(cum_bits) << ','
                << cum_slots << '\n';
            out.rows += row.str();
          }
          pr.final_mean_loss = metrics.mean_loss;
          pr.final_median_client_loss = median(metrics.client_loss);
          pr.final_max_distance = metrics.max_pairwise_distance;
          out.points.push_back(std::move(pr));
        }

        if (rep != 0) continue;
        out.routes.push_back(Json{{"edge_density", topo.densities[d]},
                                  {"relays", relays},
                                  {"K", k},
                                  {"graph", io::graph_to_json(graph)},
                                  {"plan", io::plan_to_json(plan)}});
        if (c.bounds && constants) {
          analysis::BoundInputs in;
          in.L = constants->L;
          in.mu = constants->mu;
          in.eta = c.task.learning_rate;
          in.I = c.task.epochs;
          in.p = task.weights();
          in.rho = plan.success_matrix();
          in.sigma_bar_sq = constants->sigma_bar_sq;
          in.tau = c.tau.value_or(analysis::calibrate_tau(in.rho));
          const auto report = stage("bounds", [&] { return analysis::bound_report(in, energy_max); });
          out.bounds.push_back(Json{{"edge_density", topo.densities[d]},
                                    {"relays", relays},
                                    {"K", k},
                                    {"inputs", io::bound_inputs_to_json(in)},
                                    {"sigma_domain_radius", constants->domain_radius},
                                    {"lambda_max_observed", energy_max},
                                    {"report", io::bound_report_to_json(report)}});
        }
      }
    }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& c, int jobs) {
  const auto reps = static_cast<std::size_t>(c.replications);
  std::vector<RepOutput> outputs(reps);
  std::vector<std::exception_ptr> errors(reps);
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, reps);
  auto work = [&](std::size_t w) {
    for (std::size_t r = w; r < reps; r += workers) {
      try {
        outputs[r] = run_replication(c, static_cast<int>(r));
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::uint64_t hash = config_hash(c);
  const std::size_t n = participant_count(c);
  ExperimentResult result;

  std::ostringstream csv;
  csv << "# radfl-metrics v1 config_hash=" << hex64(hash) << " root_seed=" << c.root_seed << '\n';
  csv << "replication,round,protocol,scheme,K,relays,density";
  for (std::size_t i = 0; i < n; ++i) csv << ",loss_" << i;
  csv << ",mean_loss,mean_accuracy,max_pairwise_distance,mean_bias_norm_sq,distance_to_optimum,"
         "cumulative_traffic_bits,cumulative_slots\n";
  for (const auto& o : outputs) csv << o.rows;
  result.metrics_csv = csv.str();

  std::size_t idx = 0;
  Json runs = Json::array();
  for (std::size_t d = 0; d < c.topology.densities.size(); ++d)
    for (std::size_t relays : c.topology.relays)
      for (int k : c.packet_lengths)
        for (const auto& spec : c.protocols) {
          RunSummary s;
          s.protocol = spec.label();
          s.scheme = protocol::to_string(spec.scheme);
          s.K = k;
          s.relays = relays;
          s.density = c.topology.densities[d];
          for (const auto& o : outputs) {
            const PointResult& pr = o.points[idx];
            s.final_mean_loss.push_back(pr.final_mean_loss);
            s.final_median_client_loss.push_back(pr.final_median_client_loss);
            s.final_max_distance.push_back(pr.final_max_distance);
            s.max_trajectory_divergence = std::max(s.max_trajectory_divergence, pr.divergence);
          }
          s.slots_per_round = outputs[0].points[idx].overhead.total_slots;
          s.traffic_bits_per_round = outputs[0].points[idx].overhead.total_traffic_bits;
          s.median_final_loss = median(s.final_mean_loss);
          runs.push_back(Json{{"protocol", s.protocol},
                              {"scheme", s.scheme},
                              {"K", s.K},
                              {"relays", s.relays},
                              {"edge_density", s.density},
                              {"final_mean_loss", s.final_mean_loss},
                              {"final_median_client_loss", s.final_median_client_loss},
                              {"final_max_pairwise_distance", s.final_max_distance},
                              {"median_final_mean_loss", s.median_final_loss},
                              {"slots_per_round", s.slots_per_round},
                              {"traffic_bits_per_round", s.traffic_bits_per_round},
                              {"total_slots", static_cast<long long>(s.slots_per_round) * c.rounds},
                              {"total_traffic_bits", s.traffic_bits_per_round * c.rounds},
                              {"max_trajectory_divergence", s.max_trajectory_divergence}});
          result.runs.push_back(std::move(s));
          ++idx;
        }

  const Json header{{"config_hash", hex64(hash)}, {"root_seed", c.root_seed}, {"name", c.name}};
  result.summary = header;
  result.summary["runs"] = std::move(runs);
  result.routes = header;
  result.routes["routes"] = outputs[0].routes;
  result.bounds = header;
  result.bounds["bounds"] = outputs[0].bounds;
  if (!c.task.kind.empty() && c.task.kind != "quadratic") result.bounds["note"] = "bounds need a quadratic task";
  return result;
}

void write_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  io::write_text(dir / "metrics.csv", r.metrics_csv);
  io::write_text(dir / "summary.json", r.summary.dump(2) + "\n");
  io::write_text(dir / "bounds.json", r.bounds.dump(2) + "\n");
  io::write_text(dir / "routes.json", r.routes.dump(2) + "\n");
}

std::vector<AggregatorScore> sweep_aggregator(const ExperimentConfig& config, int jobs) {
  const auto it = std::find_if(config.protocols.begin(), config.protocols.end(),
                               [](const auto& p) { return p.kind == protocol::Kind::Centralized; });
  if (it == config.protocols.end()) throw Error("ConfigError", "sweep-aggregator needs a cfl protocol");
  std::vector<AggregatorScore> scores;
  for (std::size_t a = 0; a < participant_count(config); ++a) {
    ExperimentConfig c = config;
    ProtocolSpec spec = *it;
    spec.aggregator = a;
    c.protocols = {spec};
    c.bounds = false;
    const auto result = run_experiment(c, jobs);
    scores.push_back({a, result.runs.front().median_final_loss});
  }
  std::stable_sort(scores.begin(), scores.end(), [](const auto& x, const auto& y) { return x.final_loss < y.final_loss; });
  return scores;
}

}  // namespace radfl::experiment
