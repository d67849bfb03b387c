#include "helpers.hpp"

#include "radfl/analysis.hpp"
#include "radfl/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>

using namespace radfl;
using namespace radfl::experiment;
using testing::error_kind;

namespace {

std::string config_error(const std::string& text) {
  try {
    (void)parse_config(text, "cfg.json");
  } catch (const Error& e) {
    if (e.kind() == "ConfigError") return e.what();
    return "wrong kind: " + e.kind();
  }
  return "";
}

const char* kSmall = R"({
  "name": "small",
  "root_seed": 5,
  "rounds": 6,
  "replications": 3,
  "packet_lengths": [2, 8],
  "topology": {"kind": "random", "participants": 5, "area_m2": 4e8, "edge_density": 0.6, "relays": [0, 2]},
  "channel": {"frequency_unit": "MHz"},
  "task": {"kind": "quadratic", "dim": 6, "learning_rate": 0.1, "epochs": 2},
  "protocols": [
    {"kind": "raa", "scheme": "coeff-normalization"},
    {"kind": "raa", "scheme": "model-substitution"},
    {"kind": "aayg", "J": 2},
    {"kind": "cfl", "aggregator": 1}
  ]
})";

std::string star_config(int rounds, double lossy_bit) {
  return std::string(R"({
  "name": "star",
  "root_seed": 3,
  "rounds": )") + std::to_string(rounds) + R"(,
  "replications": 9,
  "packet_lengths": [4],
  "topology": {"kind": "graph", "graph": {
    "nodes": [{"id": 0, "x_m": 0, "y_m": 0, "kind": "participant"},
              {"id": 1, "x_m": 1, "y_m": 0, "kind": "participant"},
              {"id": 2, "x_m": 0, "y_m": 1, "kind": "participant"},
              {"id": 3, "x_m": -1, "y_m": 0, "kind": "participant"},
              {"id": 4, "x_m": 0, "y_m": -1, "kind": "participant"}],
    "links": [{"m": 0, "n": 1, "bit_success": 0.995},
              {"m": 0, "n": 2, "bit_success": 0.995},
              {"m": 0, "n": 3, "bit_success": 0.995},
              {"m": 0, "n": 4, "bit_success": )" + std::to_string(lossy_bit) + R"(}]}},
  "task": {"kind": "quadratic", "dim": 8, "heterogeneity": 2.0, "learning_rate": 0.1, "epochs": 3},
  "protocols": [{"kind": "cfl"}],
  "bounds": false
})";
}

}  // namespace

TEST_CASE("recipes parse and name their protocols") {
  for (const auto& name : recipe_names()) {
    const auto c = recipe(name);
    CHECK(c.name == name);
    CHECK(!c.protocols.empty());
  }
  CHECK(error_kind([] { (void)recipe("nope"); }) == "ConfigError");
  CHECK(recipe("overhead-table").protocols[2].label() == "aayg-J5");
  CHECK(recipe("relay-sweep").protocols[1].label() == "cfl-a6-ef");
}

TEST_CASE("config diagnostics carry file and line") {
  const std::string unknown = "{\n  \"rounds\": 3,\n  \"protocols\": [{\"kind\": \"raa\"}],\n  \"colour\": 1\n}";
  const auto e1 = config_error(unknown);
  CHECK(e1.find("cfg.json:4:") != std::string::npos);
  CHECK(e1.find("colour") != std::string::npos);

  const std::string bad_rate =
      "{\n  \"protocols\": [{\"kind\": \"raa\"}],\n  \"task\": {\n    \"kind\": \"quadratic\",\n    \"learning_rate\": 0.4\n  }\n}";
  CHECK(config_error(bad_rate).find("cfg.json:5:") != std::string::npos);

  const std::string bad_kind = "{\n  \"protocols\": [\n    {\"kind\": \"raa\"},\n    {\"kind\": \"flood\"}\n  ]\n}";
  CHECK(config_error(bad_kind).find("cfg.json:4:") != std::string::npos);

  const std::string bad_type = "{\n  \"protocols\": [{\"kind\": \"raa\"}],\n  \"rounds\": \"ten\"\n}";
  CHECK(config_error(bad_type).find("cfg.json:3:") != std::string::npos);

  const std::string bad_agg = "{\n  \"protocols\": [\n    {\"kind\": \"cfl\", \"aggregator\": 10}\n  ]\n}";
  CHECK(config_error(bad_agg).find("cfg.json:3:") != std::string::npos);

  CHECK(!config_error("{\"protocols\": []}").empty());
  CHECK(!config_error("{\"protocols\": [{\"kind\": \"raa\"}], \"packet_lengths\": [0]}").empty());
  CHECK(!config_error("{\"protocols\": [{\"kind\": \"raa\", \"J\": 2}]}").empty());
  CHECK(!config_error("{\"protocols\": [{\"kind\": \"raa\"}], \"topology\": {\"edge_density\": 0}}").empty());
  CHECK(!config_error("{\"protocols\": [{\"kind\": \"raa\"}], \"channel\": {\"modulation\": \"FSK\"}}").empty());
  CHECK(!config_error("not json").empty());
  CHECK(config_error(kSmall).empty());
}

TEST_CASE("canonical form round trips and hashes ignore the seed") {
  const auto c = parse_config(kSmall, "small");
  const auto again = parse_config(to_json(c).dump(2), "again");
  CHECK(to_json(again) == to_json(c));
  auto reseeded = c;
  reseeded.root_seed = 99;
  CHECK(config_hash(reseeded) == config_hash(c));
  auto changed = c;
  changed.rounds = 7;
  CHECK(config_hash(changed) != config_hash(c));
}

TEST_CASE("runs are deterministic and independent of the job count") {
  const auto c = parse_config(kSmall, "small");
  const auto a = run_experiment(c, 1);
  const auto b = run_experiment(c, 3);
  CHECK(a.metrics_csv == b.metrics_csv);
  CHECK(a.summary.dump() == b.summary.dump());
  CHECK(a.bounds.dump() == b.bounds.dump());
  CHECK(a.routes.dump() == b.routes.dump());
  // 3 reps x 2 relays x 2 K x 4 protocols x 6 rounds + 2 header lines
  CHECK(std::count(a.metrics_csv.begin(), a.metrics_csv.end(), '\n') == 3 * 2 * 2 * 4 * 6 + 2);
  CHECK(a.runs.size() == 2 * 2 * 4);
  CHECK(a.metrics_csv.rfind("# radfl-metrics v1 config_hash=", 0) == 0);
  CHECK(a.summary.contains("config_hash"));
  CHECK(a.bounds["bounds"].size() == 4);
  auto reseeded = c;
  reseeded.root_seed = 6;
  CHECK(run_experiment(reseeded, 1).metrics_csv != a.metrics_csv);
}

TEST_CASE("adding a protocol leaves the others' draws untouched") {
  auto c = parse_config(kSmall, "small");
  const auto full = run_experiment(c, 1);
  c.protocols.erase(c.protocols.begin() + 1);
  const auto fewer = run_experiment(c, 1);
  for (const auto& r : fewer.runs) {
    const auto it = std::find_if(full.runs.begin(), full.runs.end(), [&](const RunSummary& f) {
      return f.protocol == r.protocol && f.scheme == r.scheme && f.K == r.K && f.relays == r.relays;
    });
    REQUIRE(it != full.runs.end());
    CHECK(it->final_mean_loss == r.final_mean_loss);
  }
}

TEST_CASE("error-free recipe has no trajectory divergence") {
  const auto res = run_experiment(recipe("errorfree-equivalence"), 1);
  REQUIRE(res.runs.size() == 3);
  for (const auto& r : res.runs) CHECK(r.max_trajectory_divergence <= 1e-12);
}

TEST_CASE("overhead recipe reports the gossip traffic") {
  const auto res = run_experiment(recipe("overhead-table"), 1);
  int seen = 0;
  for (const auto& r : res.runs) {
    if (r.protocol == "aayg-J1") {
      CHECK(r.traffic_bits_per_round / 1e6 == doctest::Approx(387.2).epsilon(1e-12));
      ++seen;
    }
    if (r.protocol == "aayg-J5") {
      CHECK(r.traffic_bits_per_round / 1e6 == doctest::Approx(1936.0).epsilon(1e-12));
      ++seen;
    }
  }
  CHECK(seen == 4);
}

TEST_CASE("relay recipe loss does not grow with the relay count") {
  const auto res = run_experiment(recipe("relay-sweep"), 4);
  std::vector<double> raa;
  for (const auto& r : res.runs)
    if (r.protocol == "raa") raa.push_back(r.median_final_loss);
  REQUIRE(raa.size() == 4);
  for (std::size_t i = 0; i + 1 < raa.size(); ++i) CHECK(raa[i + 1] <= raa[i]);
}

TEST_CASE("outputs are written with headers") {
  auto c = parse_config(kSmall, "small");
  c.replications = 1;
  const auto res = run_experiment(c, 1);
  const auto dir = std::filesystem::temp_directory_path() / "radfl_experiment_test";
  write_outputs(res, dir);
  for (const char* f : {"metrics.csv", "summary.json", "bounds.json", "routes.json"})
    CHECK(std::filesystem::exists(dir / f));
  const auto s = io::parse_json(io::read_text(dir / "summary.json"), "summary.json");
  CHECK(s["root_seed"] == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("star center ranks first as aggregator") {
  const auto c = parse_config(star_config(30, 0.99), "star");
  const auto scores = sweep_aggregator(c, 2);
  REQUIRE(scores.size() == 5);
  CHECK(scores[0].aggregator == 0);
  const auto again = sweep_aggregator(c, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(again[i].aggregator == scores[i].aggregator);
    CHECK(again[i].final_loss == scores[i].final_loss);
  }
}

TEST_CASE("two error-free clients tie as aggregator") {
  const std::string text = R"({
    "rounds": 5,
    "topology": {"kind": "coordinates", "coordinates": [[0, 0], [100, 0]], "edge_density": 1.0, "error_free": true},
    "task": {"kind": "quadratic", "dim": 4},
    "protocols": [{"kind": "cfl"}],
    "bounds": false
  })";
  const auto scores = sweep_aggregator(parse_config(text, "two"), 1);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].final_loss == scores[1].final_loss);
  CHECK(scores[0].aggregator == 0);
}

TEST_CASE("sweep needs a centralized protocol") {
  auto c = parse_config(kSmall, "s");
  c.protocols.pop_back();
  CHECK(error_kind([&] { (void)sweep_aggregator(c, 1); }) == "ConfigError");
}

TEST_CASE("runtime failures name the stage") {
  auto c = parse_config(kSmall, "small");
  c.topology.kind = "coordinates";
  c.topology.coordinates = {{0, 0}, {1, 0}, {2, 0}, {1e6, 0}, {1e6 + 1, 0}, {1e6 + 2, 0}};
  c.topology.densities = {0.4};
  c.topology.relays = {0};
  CHECK(error_kind([&] { (void)run_experiment(c, 1); }) == "StageFailure");
  try {
    (void)run_experiment(c, 1);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("topology") != std::string::npos);
  }
}

#ifdef RADFL_CLI
TEST_CASE("command line exit codes") {
  const auto dir = std::filesystem::temp_directory_path() / "radfl_cli_test";
  std::filesystem::create_directories(dir);
  const auto run = [&](const std::string& args) {
    const std::string cmd = std::string(RADFL_CLI) + " " + args + " > " + (dir / "out.txt").string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  {
    std::ofstream(dir / "bad.json") << "{\n  \"protocols\": [{\"kind\": \"raa\"}],\n  \"bogus\": 1\n}\n";
  }
  CHECK(run("simulate " + (dir / "bad.json").string()) == 2);
  CHECK(io::read_text(dir / "out.txt").find("bad.json:3:") != std::string::npos);
  CHECK(run("simulate " + (dir / "missing.json").string()) == 2);
  {
    std::ofstream(dir / "sparse.json") << R"({"rounds": 1, "protocols": [{"kind": "raa"}],
      "topology": {"coordinates": [[0, 0], [1, 0], [2, 0], [1e6, 0], [1000001, 0], [1000002, 0]], "edge_density": 0.4}})";
  }
  CHECK(run("simulate " + (dir / "sparse.json").string() + " --out " + (dir / "o").string()) == 3);
  CHECK(io::read_text(dir / "out.txt").find("stage topology") != std::string::npos);
  CHECK(run("recipe") == 0);
  CHECK(run("simulate --recipe overhead-table --out " + (dir / "ovh").string()) == 0);
  CHECK(std::filesystem::exists(dir / "ovh" / "summary.json"));
  {
    std::ofstream(dir / "bounds.json") << R"({"L": 1, "mu": 0.5, "eta": 0.2, "I": 3,
      "p": [0.5, 0.5], "rho": [[1, 0.9], [0.9, 1]], "lambda_max": 2})";
    std::ofstream(dir / "badbounds.json") << R"({"L": 1, "mu": 0.5, "eta": 0.9, "I": 3,
      "p": [0.5, 0.5], "rho": [[1, 0.9], [0.9, 1]]})";
  }
  CHECK(run("bounds " + (dir / "bounds.json").string()) == 0);
  CHECK(io::read_text(dir / "out.txt").find("\"zeta1\"") != std::string::npos);
  CHECK(run("bounds " + (dir / "badbounds.json").string()) == 2);
  {
    std::ofstream(dir / "g.json") << io::graph_to_json(testing::make_graph(3, {{0, 1, 0.999}, {1, 2, 0.999}})).dump();
    std::ofstream(dir / "b.json") << R"({"max_transmissions": [1, 0, 1]})";
  }
  CHECK(run("routes " + (dir / "g.json").string()) == 0);
  CHECK(io::read_text(dir / "out.txt").find("routing_objective") != std::string::npos);
  CHECK(run("routes " + (dir / "g.json").string() + " --budget " + (dir / "b.json").string()) == 0);
  CHECK(io::read_text(dir / "out.txt").find("infeasible") != std::string::npos);
  CHECK(run("frobnicate") == 2);
  std::filesystem::remove_all(dir);
}
#endif

#ifdef RADFL_CONFIG_DIR
TEST_CASE("shipped configs parse") {
  int experiments = 0;
  for (const auto& entry : std::filesystem::directory_iterator(RADFL_CONFIG_DIR)) {
    const auto path = entry.path();
    const auto doc = io::parse_json(io::read_text(path), path.string());
    if (doc.contains("protocols")) {
      CHECK_NOTHROW((void)parse_config(io::read_text(path), path.string()));
      ++experiments;
    } else if (doc.contains("nodes")) {
      CHECK_NOTHROW((void)io::graph_from_json(doc));
    } else if (doc.contains("L")) {
      auto inputs = doc;
      inputs.erase("lambda_max");
      CHECK_NOTHROW(analysis::validate(io::bound_inputs_from_json(inputs)));
    }
  }
  CHECK(experiments >= 4);
  for (const auto& name : recipe_names())
    CHECK(to_json(parse_config(io::read_text(std::filesystem::path(RADFL_CONFIG_DIR) / (name + ".json")), name)) ==
          to_json(recipe(name)));
}
#endif
