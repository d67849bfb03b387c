#include "radfl/analysis.hpp"
#include "radfl/experiment.hpp"
#include "radfl/io.hpp"
#include "radfl/routing.hpp"
#include "radfl/schedule.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <numeric>
#include <optional>
#include <string>

namespace {

using radfl::Error;
using radfl::io::Json;
namespace ex = radfl::experiment;

bool is_input_error(const Error& e) {
  const auto& k = e.kind();
  return k == "ConfigError" || k == "InvalidGraph" || k == "InvalidBoundInputs" || k == "InvalidTask" ||
         k == "InvalidBudget" || k == "IoError";
}

/// Runs `body` and maps failures to exit codes: 2 for bad input, 3 for a
/// runtime failure (the message names the stage).
template <class F>
int guarded(const char* stage, F&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    if (is_input_error(e)) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
    if (e.kind() == "StageFailure")
      std::cerr << "error: stage " << e.what() + std::string_view("StageFailure: ").size() << '\n';
    else
      std::cerr << "error: stage " << stage << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    const std::string_view s(stage);
    if (s == "input" || s == "config") {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
    std::cerr << "error: stage " << stage << ": " << e.what() << '\n';
    return 3;
  }
}

ex::ExperimentConfig load_config(const std::string& file, const std::string& recipe) {
  if (!recipe.empty()) return ex::recipe(recipe);
  if (file.empty()) throw Error("ConfigError", "a config file or --recipe is required");
  return ex::parse_config(radfl::io::read_text(file), file);
}

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Route-and-aggregate decentralized FL simulator"};
  app.require_subcommand(1);

  std::string config_file, recipe_name, out_dir;
  std::optional<std::uint64_t> seed;
  int jobs = 1;

  auto* simulate = app.add_subcommand("simulate", "Run an experiment and write metrics.csv, summary.json, bounds.json, routes.json");
  simulate->add_option("config", config_file, "Experiment config (JSON)");
  simulate->add_option("--recipe", recipe_name, "Use a canned recipe instead of a config file");
  simulate->add_option("--out", out_dir, "Output directory (default: the config's output)");
  simulate->add_option("--seed", seed, "Override the root seed");
  simulate->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string graph_file, budget_file, weights_file, schedule_file;
  int elements = 1;
  auto* routes = app.add_subcommand("routes", "Minimum-PER (or budget-constrained) routes for a graph");
  routes->add_option("graph", graph_file, "Graph document (JSON)")->required();
  routes->add_option("--budget", budget_file, "Per-node transmission budgets (JSON)");
  routes->add_option("-K,--elements", elements, "Elements per packet")->check(CLI::PositiveNumber);
  routes->add_option("--weights", weights_file, "JSON array of client weights p (default uniform)");
  routes->add_option("--schedule", schedule_file, "Write the slot schedule as CSV");

  std::string bounds_file;
  auto* bounds = app.add_subcommand("bounds", "Zeta constants, bias bounds and convergence terms for given inputs");
  bounds->add_option("inputs", bounds_file, "Bound inputs (JSON)")->required();

  auto* sweep = app.add_subcommand("sweep-aggregator", "Rank every participant as the C-FL aggregator");
  sweep->add_option("config", config_file, "Experiment config (JSON)");
  sweep->add_option("--recipe", recipe_name, "Use a canned recipe instead of a config file");
  sweep->add_option("--seed", seed, "Override the root seed");
  sweep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string show_name;
  auto* recipes = app.add_subcommand("recipe", "Print a canned recipe, or list them");
  recipes->add_option("name", show_name, "Recipe name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*simulate) {
    ex::ExperimentConfig config;
    if (const int rc = guarded("config", [&] { config = load_config(config_file, recipe_name); })) return rc;
    if (seed) config.root_seed = *seed;
    return guarded("simulate", [&] {
      const auto result = ex::run_experiment(config, jobs);
      const std::string dir = out_dir.empty() ? config.output : out_dir;
      ex::write_outputs(result, dir);
      std::cout << "wrote " << dir << " (config_hash " << result.summary["config_hash"].get<std::string>() << ")\n";
    });
  }

  if (*routes) {
    std::optional<radfl::net::NetworkGraph> loaded;
    std::optional<radfl::routing::BandwidthBudget> budget;
    std::vector<double> p;
    const int rc = guarded("input", [&] {
      loaded = radfl::io::graph_from_json(radfl::io::parse_json(radfl::io::read_text(graph_file), graph_file));
      if (!budget_file.empty())
        budget = radfl::io::budget_from_json(radfl::io::parse_json(radfl::io::read_text(budget_file), budget_file), *loaded);
      p = uniform_weights(loaded->num_participants());
      if (!weights_file.empty()) {
        const Json w = radfl::io::parse_json(radfl::io::read_text(weights_file), weights_file);
        if (!w.is_array() || w.size() != loaded->num_participants())
          throw Error("ConfigError", weights_file + ": expected one weight per participant");
        p = w.get<std::vector<double>>();
      }
    });
    if (rc) return rc;
    const auto& graph = *loaded;
    return guarded("routing", [&] {
      Json out;
      radfl::routing::RoutePlan plan;
      if (budget) {
        const auto admitted = radfl::routing::constrained_admission(graph, *budget, p, elements);
        plan = admitted.plan;
        out = radfl::io::plan_to_json(plan);
        Json bad = Json::array();
        for (const auto& [m, n] : admitted.infeasible) bad.push_back({m, n});
        out["infeasible"] = std::move(bad);
        out["residual_budget"] = admitted.residual;
      } else {
        plan = radfl::routing::min_per_routes(graph, elements);
        out = radfl::io::plan_to_json(plan);
      }
      out["routing_objective"] = radfl::routing::routing_objective(plan, p);
      if (!schedule_file.empty()) {
        const double bits = static_cast<double>(graph.channel().bits_per_element);
        const auto sched = radfl::routing::schedule_route_and_aggregate(plan, graph, bits * elements);
        radfl::io::write_text(schedule_file, radfl::routing::schedule_csv(sched));
        out["total_slots"] = sched.total_slots;
      }
      std::cout << out.dump(2) << '\n';
    });
  }

  if (*bounds) {
    radfl::analysis::BoundInputs in;
    std::optional<double> lambda_max;
    const int rc = guarded("input", [&] {
      Json j = radfl::io::parse_json(radfl::io::read_text(bounds_file), bounds_file);
      if (j.contains("lambda_max")) {
        lambda_max = j.at("lambda_max").get<double>();
        j.erase("lambda_max");
      }
      in = radfl::io::bound_inputs_from_json(j);
      radfl::analysis::validate(in);
    });
    if (rc) return rc;
    return guarded("bounds", [&] {
      const auto report = radfl::analysis::bound_report(in, lambda_max);
      std::cout << radfl::io::bound_report_to_json(report).dump(2) << '\n';
    });
  }

  if (*sweep) {
    ex::ExperimentConfig config;
    if (const int rc = guarded("config", [&] { config = load_config(config_file, recipe_name); })) return rc;
    if (seed) config.root_seed = *seed;
    return guarded("sweep-aggregator", [&] {
      Json ranking = Json::array();
      for (const auto& s : ex::sweep_aggregator(config, jobs))
        ranking.push_back({{"aggregator", s.aggregator}, {"median_final_mean_loss", s.final_loss}});
      std::cout << Json{{"root_seed", config.root_seed}, {"ranking", ranking}}.dump(2) << '\n';
    });
  }

  if (*recipes) {
    return guarded("recipe", [&] {
      if (show_name.empty()) {
        for (const auto& n : ex::recipe_names()) std::cout << n << '\n';
      } else {
        std::cout << ex::recipe_text(show_name);
      }
    });
  }
  return 0;
}
