#include "helpers.hpp"

#include "radfl/io.hpp"

#include <filesystem>

using namespace radfl;
using namespace radfl::io;
using testing::error_kind;

TEST_CASE("graph json round trip is lossless") {
  const auto g = net::build_with_random_relays(net::reference_coordinates(), 3, {1000, 0}, {5000, 5000}, 0.5, 4, {});
  const Json j = graph_to_json(g);
  const auto back = graph_from_json(parse_json(j.dump(), "mem"));
  REQUIRE(back.num_nodes() == g.num_nodes());
  REQUIRE(back.links().size() == g.links().size());
  for (std::size_t i = 0; i < g.links().size(); ++i) {
    CHECK(back.links()[i].bit_success == g.links()[i].bit_success);
    CHECK(back.links()[i].distance_m == g.links()[i].distance_m);
    CHECK(back.links()[i].snr_linear == g.links()[i].snr_linear);
  }
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    CHECK(back.nodes()[i].coords.x == g.nodes()[i].coords.x);
    CHECK(back.nodes()[i].kind == g.nodes()[i].kind);
  }
  CHECK(back.edge_density() == g.edge_density());
  CHECK(graph_to_json(back).dump() == j.dump());
}

TEST_CASE("minimal graph documents") {
  const Json j = parse_json(R"({"nodes": [{"id": 0, "x_m": 0, "y_m": 0, "kind": "participant"},
                                          {"id": 1, "x_m": 5, "y_m": 0, "kind": "participant"}],
                               "links": [{"m": 0, "n": 1, "bit_success": 0.999}]})",
                            "mem");
  const auto g = graph_from_json(j);
  CHECK(g.links().size() == 1);
  CHECK(g.links()[0].bit_success == 0.999);
  CHECK(error_kind([] { (void)graph_from_json(Json::parse(R"({"nodes": 3})")); }) == "InvalidGraph");
}

TEST_CASE("plan export") {
  const auto g = testing::make_graph(3, {{0, 1, 0.999}, {1, 2, 0.999}});
  const Json j = plan_to_json(routing::min_per_routes(g, 2));
  CHECK(j["elements"] == 2);
  CHECK(j["pairs"].size() == 6);
  CHECK(j["pairs"][1]["hops"] == Json::array({0, 1, 2}));
}

TEST_CASE("budgets") {
  const auto g = testing::make_graph(3, {{0, 1, 0.999}, {1, 2, 0.999}});
  const auto b = budget_from_json(Json::parse(R"({"max_transmissions": [2, null, -1]})"), g);
  CHECK(b.max_transmissions[0] == 2);
  CHECK(b.max_transmissions[1] == routing::BandwidthBudget::unlimited);
  CHECK(b.max_transmissions[2] == routing::BandwidthBudget::unlimited);
  CHECK(error_kind([&] { (void)budget_from_json(Json::parse(R"({"max_transmissions": [1, 1, 1, 1]})"), g); }) ==
        "InvalidBudget");
}

TEST_CASE("task json round trip") {
  learning::ClassifierSpec cs;
  cs.clients = 3;
  cs.features = 4;
  const auto t = learning::generate_mlp(cs, 3);
  const auto back = task_from_json(parse_json(task_to_json(t).dump(), "mem"));
  CHECK(back.weights() == t.weights());
  CHECK(std::string(back.kind()) == "mlp");
  const VectorXd w = VectorXd::Constant(t.dim(), 0.1);
  CHECK(back.loss(1, w) == t.loss(1, w));
  learning::QuadraticSpec qs;
  qs.clients = 2;
  qs.dim = 3;
  const auto q = learning::generate_quadratic(qs, 1);
  const auto qb = task_from_json(task_to_json(q));
  CHECK(qb.gradient(0, VectorXd::Ones(3)) == q.gradient(0, VectorXd::Ones(3)));
}

TEST_CASE("checkpoints") {
  VectorXd v(5);
  v << 1.0, -0.0, 1e-300, std::nextafter(1.0, 2.0), -123.456;
  const learning::ModelVector m(v, 2);
  const std::string bytes = encode_checkpoint(m);
  CHECK(bytes.size() == 16 + 8 * 5);
  CHECK(bytes.substr(0, 4) == "RAFL");
  CHECK(static_cast<unsigned char>(bytes[4]) == 5);
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.params() == v);
  CHECK(std::signbit(back.params()(1)));
  CHECK(back.segment_size() == 2);
  CHECK(error_kind([&] { (void)decode_checkpoint(bytes.substr(0, 30)); }) == "CorruptCheckpoint");
  CHECK(error_kind([&] { (void)decode_checkpoint("XXXX" + bytes.substr(4)); }) == "CorruptCheckpoint");
  const auto dir = std::filesystem::temp_directory_path() / "radfl_io_test";
  write_checkpoint(dir / "m.bin", m);
  CHECK(read_checkpoint(dir / "m.bin").params() == v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("source map and diagnostics") {
  const std::string text = "{\n  \"a\": 1,\n  \"b\": {\n    \"c\": [\n      5,\n      6\n    ]\n  }\n}\n";
  const SourceMap map(text);
  CHECK(map.line_of("/a") == 2);
  CHECK(map.line_of("/b") == 3);
  CHECK(map.line_of("/b/c/1") == 6);
  CHECK(map.line_of("/b/c/9") == 4);
  const Json j = parse_json(text, "x.json");
  try {
    check_keys(j.at("b"), {"d"}, "/b", map, "x.json");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == "ConfigError");
    CHECK(std::string(e.what()).find("x.json:4:") != std::string::npos);
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
  try {
    (void)parse_json("{\n\"a\": 1,\n\"b\": }\n", "y.json");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == "ConfigError");
    CHECK(std::string(e.what()).find("y.json:3:") != std::string::npos);
  }
}

TEST_CASE("bound inputs and report json") {
  analysis::BoundInputs in;
  in.L = 1.0;
  in.mu = 0.5;
  in.eta = 0.2;
  in.I = 3;
  in.p = {0.5, 0.5};
  in.rho = MatrixXd::Ones(2, 2);
  in.rho(0, 1) = in.rho(1, 0) = 0.9;
  const Json j = bound_inputs_to_json(in);
  Json without_tau = j;
  without_tau.erase("tau");
  const auto back = bound_inputs_from_json(without_tau);
  CHECK(back.tau == doctest::Approx(0.1));
  CHECK(back.rho == in.rho);
  in.tau = 0.1;
  const Json report = bound_report_to_json(analysis::bound_report(in, 2.0));
  CHECK(report["routing_objective"].get<double>() == doctest::Approx(0.15));
  CHECK(report["lemma3_norm_bound"].get<double>() == doctest::Approx(0.15));
  CHECK(report.contains("theorem2"));
  CHECK(error_kind([] { (void)bound_inputs_from_json(Json::parse(R"({"L": 1})")); }) == "InvalidBoundInputs");
}

TEST_CASE("number formatting round trips") {
  for (double x : {0.1, 1.0 / 3.0, 1e-310, 6.02214076e23, -2.5}) CHECK(std::strtod(format_double(x).c_str(), nullptr) == x);
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("histogram csv") {
  analysis::CoefficientDistribution d;
  d.bins = 2;
  analysis::PairStats s;
  s.src = 1;
  s.dst = 0;
  s.histogram = {3, 4};
  d.pairs.push_back(s);
  const std::string csv = histogram_csv(d);
  CHECK(csv == "pair,bin_lo,bin_hi,count\n1->0,0,0.5,3\n1->0,0.5,1,4\n");
}
