#include "helpers.hpp"
#include "oracles.hpp"

#include "radfl/analysis.hpp"

using namespace radfl;
using namespace radfl::analysis;
using testing::close_rel;
using testing::error_kind;

namespace {

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double total = 0.0;
  for (auto& w : p) total += (w = 0.05 + rng.uniform());
  for (auto& w : p) w /= total;
  return p;
}

MatrixXd random_rho(std::size_t n, Rng& rng, double lo = 0.0) {
  MatrixXd r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r(i, j) = i == j ? 1.0 : rng.uniform(lo, 1.0);
  return r;
}

BoundInputs random_inputs(Rng& rng, std::size_t n) {
  BoundInputs in;
  in.L = rng.uniform(0.5, 5.0);
  in.mu = in.L * rng.uniform(0.05, 1.0);
  in.eta = rng.uniform(0.01, 0.99) / (2.0 * in.L);
  in.I = 1 + static_cast<int>(rng.below(20));
  in.p = random_weights(n, rng);
  in.rho = random_rho(n, rng, 0.5);
  in.tau = rng.uniform(0.01, 1.0);
  in.sigma_bar_sq = rng.uniform(0.0, 3.0);
  return in;
}

}  // namespace

TEST_CASE("bias matrix examples") {
  const std::vector<double> p{0.5, 0.5};
  protocol::SuccessTensor e(2, 1);
  CHECK(bias_matrix(p, e, 0).cwiseAbs().maxCoeff() == 0.0);
  e.set(0, 1, 0, false);
  const MatrixXd lambda = bias_matrix(p, e, 0);
  CHECK(lambda(0, 1) == doctest::Approx(0.5));
  CHECK(lambda(1, 1) == doctest::Approx(-0.5));
  CHECK(lambda(0, 0) == 0.0);
}

TEST_CASE("spectral norm matches power iteration") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_weights(4, rng);
    const auto e = protocol::sample_successes(random_rho(4, rng), 1, rng);
    const MatrixXd lambda = bias_matrix(p, e, 0);
    const double ref = oracle::power_norm_sq(lambda);
    const double got = spectral_norm_sq(lambda);
    CHECK(std::abs(got - ref) <= 1e-9 * std::max(ref, 1e-300) + 1e-30);
  }
}

TEST_CASE("bias bound closed cases") {
  const std::vector<double> p{0.5, 0.5};
  const auto ones = lemma3_bounds(p, MatrixXd::Ones(2, 2));
  CHECK(ones.norm_bound == 0.0);
  CHECK(ones.entry.cwiseAbs().maxCoeff() == 0.0);
  MatrixXd rho = MatrixXd::Ones(2, 2);
  rho(0, 1) = rho(1, 0) = 0.9;
  const auto b = lemma3_bounds(p, rho);
  CHECK(b.norm_bound == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(b.exact);
  CHECK(!b.size_warning);
}

TEST_CASE("entry bound dominates the exact second moment") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const auto p = random_weights(n, rng);
    const MatrixXd rho = random_rho(n, rng);
    const auto b = lemma3_bounds(p, rho);
    const MatrixXd exact = oracle::exact_entry_second_moment(p, rho);
    for (Eigen::Index i = 0; i < exact.size(); ++i) CHECK(exact.data()[i] <= b.entry.data()[i] + 1e-15);
  }
}

TEST_CASE("empirical moments agree with exact enumeration") {
  const std::vector<double> p{1.0 / 3, 1.0 / 3, 1.0 / 3};
  MatrixXd rho = MatrixXd::Ones(3, 3);
  rho(0, 2) = 0.6;
  const auto mc = empirical_bias_moments(p, rho, 200000, 5);
  const MatrixXd exact = oracle::exact_entry_second_moment(p, rho);
  const auto b = lemma3_bounds(p, rho);
  for (Eigen::Index i = 0; i < exact.size(); ++i) {
    CHECK(std::abs(mc.mean_entry_sq.data()[i] - exact.data()[i]) <= 5 * mc.entry_std_error.data()[i] + 1e-15);
    CHECK(mc.mean_entry_sq.data()[i] <= b.entry.data()[i] + 4 * mc.entry_std_error.data()[i]);
  }
  CHECK(mc.mean_norm_sq <= b.norm_bound + 4 * mc.norm_std_error);
}

TEST_CASE("monte carlo is independent of the job count") {
  Rng rng(2);
  const auto p = random_weights(5, rng);
  const MatrixXd rho = random_rho(5, rng);
  const auto one = empirical_bias_moments(p, rho, 20000, 7, 1);
  const auto four = empirical_bias_moments(p, rho, 20000, 7, 4);
  CHECK(one.mean_norm_sq == four.mean_norm_sq);
  CHECK(one.mean_entry_sq == four.mean_entry_sq);
}

TEST_CASE("large N falls back to sampling with a warning") {
  Rng rng(4);
  const auto p = random_weights(14, rng);
  const auto b = lemma3_bounds(p, random_rho(14, rng, 0.8), 3, 2000);
  CHECK(!b.exact);
  CHECK(b.size_warning);
  CHECK(b.entry_std_error.maxCoeff() > 0.0);
}

TEST_CASE("zeta limits") {
  BoundInputs in;
  in.L = 2.0;
  in.mu = 0.5;
  in.I = 5;
  in.tau = 0.3;
  in.p = {0.5, 0.5};
  in.rho = MatrixXd::Ones(2, 2);
  SUBCASE("eta to zero") {
    in.eta = 1e-12;
    const auto z = zeta_constants(in);
    CHECK(z.z1 == doctest::Approx(1.3).epsilon(1e-9));
    CHECK(std::abs(z.z2) <= 1e-9);
    CHECK(z.z3 == doctest::Approx(1.0 + 1.0 / 0.3).epsilon(1e-9));
    CHECK(std::abs(z.z4) <= 1e-9);
  }
  SUBCASE("single epoch") {
    in.eta = 0.1;
    in.I = 1;
    const auto z = zeta_constants(in);
    CHECK(z.z1 == doctest::Approx(1.3 * (1 - 2 * 0.5 * 0.1 + 0.01 * 4)).epsilon(1e-15));
    CHECK(z.z2 == 0.0);
    CHECK(z.z4 == 0.0);
  }
}

TEST_CASE("zeta constants agree with 50-digit evaluation") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_inputs(rng, 2 + rng.below(6));
    const auto z = zeta_constants(in);
    const auto ref = oracle::zeta_multiprecision(in);
    CHECK(close_rel(z.z1, ref[0], 1e-10));
    CHECK(close_rel(z.z2, ref[1], 1e-10));
    CHECK(close_rel(z.z3, ref[2], 1e-10));
    CHECK(close_rel(z.z4, ref[3], 1e-10));
    CHECK(close_rel(bias_factor(in, z), ref[4], 1e-10));
  }
}

TEST_CASE("one-round bound reductions") {
  BoundInputs in;
  in.L = 1.0;
  in.mu = 0.5;
  in.eta = 0.2;
  in.I = 3;
  in.tau = 0.0;
  in.p = {0.25, 0.25, 0.25, 0.25};
  in.rho = MatrixXd::Ones(4, 4);
  in.sigma_bar_sq = 0.7;
  const auto z = zeta_constants(in);
  const double obj = routing::routing_objective(in.rho, in.p);
  CHECK(obj == 0.0);
  CHECK(theorem1_rhs(in, z, 2.0, 5.0, obj) == z.z1 * 2.0 + z.z2 * 0.7);
  // diagonal norms for uniform p
  Zeta unit{0.0, 0.0, 1.0, 0.0};
  CHECK(bias_factor(in, unit) == doctest::Approx(4 * 0.0625 + 0.2 * 0.25));
  Zeta gap{0.0, 0.0, 0.0, 1.0};
  CHECK(bias_factor(in, gap) == doctest::Approx(1.0 / 16.0));
  CHECK(error_kind([&] { (void)theorem1_rhs(in, z, -1.0, 0.0, 0.0); }) == "DomainError");
}

TEST_CASE("asymptote closed form") {
  BoundInputs in;
  in.L = 1.0;
  in.mu = 0.8;
  in.eta = 0.3;
  in.I = 4;
  in.p = {0.3, 0.7};
  in.rho = MatrixXd::Ones(2, 2);
  in.rho(0, 1) = 0.95;
  in.rho(1, 0) = 0.9;
  in.tau = calibrate_tau(in.rho);
  CHECK(in.tau == doctest::Approx(0.1));
  in.sigma_bar_sq = 0.4;
  const auto z = zeta_constants(in);
  REQUIRE(z.z1 < 1.0);
  const double obj = routing::routing_objective(in.rho, in.p);
  const auto a = theorem2_asymptote(in, z, 3.0, obj);
  CHECK(!a.divergent);
  const double partial = theorem2_partial_sum(in, z, 3.0, obj, 1000);
  CHECK(close_rel(partial, a.value, 1e-8));
  const auto ef = theorem2_asymptote(in, z, 3.0, 0.0);
  CHECK(ef.value == z.z2 * 0.4 / (1 - z.z1));
  Zeta edge = z;
  edge.z1 = 1.0;
  CHECK(theorem2_asymptote(in, edge, 3.0, obj).divergent);
}

TEST_CASE("bound input validation") {
  BoundInputs in;
  in.p = {0.5, 0.5};
  in.rho = MatrixXd::Ones(2, 2);
  in.eta = 0.6;  // above 1/(2L)
  CHECK(error_kind([&] { validate(in); }) == "InvalidBoundInputs");
  in.eta = 0.1;
  in.p = {0.5, 0.6};
  CHECK(error_kind([&] { validate(in); }) == "InvalidBoundInputs");
  in.p = {0.5, 0.5};
  in.rho(0, 0) = 0.9;
  CHECK(error_kind([&] { validate(in); }) == "InvalidBoundInputs");
  in.rho(0, 0) = 1.0;
  CHECK_NOTHROW(validate(in));
}

TEST_CASE("coefficient distribution") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  SUBCASE("error free is degenerate") {
    const auto g = testing::make_graph(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}});
    const auto d = coefficient_distribution(p, routing::min_per_routes(g, 1), 1000, 1);
    for (const auto& s : d.pairs) {
      CHECK(s.mean == doctest::Approx(p[s.src]).epsilon(1e-14));
      CHECK(s.variance <= 1e-28);
    }
  }
  SUBCASE("dead pair has zero coefficient") {
    std::vector<NodeId> parts{0, 1, 2};
    routing::RoutePlan plan(parts, 1, 32);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        if (a != b) plan.route(a, b).e2e_success = (a == 0 && b == 2) ? 0.0 : 1.0;
    const auto d = coefficient_distribution(p, plan, 1000, 1);
    for (const auto& s : d.pairs) {
      if (s.src == 0 && s.dst == 2) CHECK(s.mean == 0.0);
      if (s.src == 2 && s.dst == 2) CHECK(s.mean == doctest::Approx(0.5 / 0.8));
    }
  }
  SUBCASE("mean gap grows as rho falls") {
    double prev_gap = 0.0;
    for (double r : {0.9, 0.7, 0.5}) {
      std::vector<NodeId> parts{0, 1, 2};
      routing::RoutePlan plan(parts, 1, 32);
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
          if (a != b) plan.route(a, b).e2e_success = (a == 0 && b == 1) ? r : 1.0;
      const auto d = coefficient_distribution(p, plan, 100000, 3);
      const auto& s = d.pairs[1];  // 0 -> 1
      REQUIRE(s.src == 0);
      REQUIRE(s.dst == 1);
      const double gap = p[0] - s.mean;
      CHECK(gap > prev_gap);
      prev_gap = gap;
      std::uint64_t total = 0;
      for (auto c : s.histogram) total += c;
      CHECK(total == 100000);
      CHECK(s.quantiles[0] <= s.quantiles[2]);
      CHECK(s.quantiles[2] <= s.quantiles[4]);
    }
  }
}

namespace {

double energy(const std::vector<VectorXd>& models, int k) {
  const Eigen::Index dim = models[0].size();
  double total = 0.0;
  for (Eigen::Index l = 0; l < learning::segment_count(dim, k); ++l) {
    const auto r = learning::segment_range(dim, k, l);
    MatrixXd w(static_cast<Eigen::Index>(models.size()), r.size);
    for (std::size_t n = 0; n < models.size(); ++n)
      w.row(static_cast<Eigen::Index>(n)) = models[n].segment(r.begin, r.size).transpose();
    total += spectral_norm_sq(w);
  }
  return total;
}

}  // namespace

TEST_CASE("one-round bound holds on a three-client quadratic testbed") {
  learning::QuadraticSpec qs;
  qs.clients = 3;
  qs.dim = 4;
  const auto task = learning::generate_quadratic(qs, 21);
  const auto constants = learning::task_constants(task);
  const int k = 2;
  routing::RoutePlan plan({0, 1, 2}, k, 32);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t d = 0; d < 3; ++d)
      if (s != d) {
        plan.route(s, d).hops = {static_cast<NodeId>(s), static_cast<NodeId>(d)};
        plan.route(s, d).hop_bit_success = {std::pow(0.8, 1.0 / 64.0)};
        plan.route(s, d).e2e_success = 0.8;
      }

  for (int epochs : {1, 2, 3}) {
    CAPTURE(epochs);
    BoundInputs in;
    in.L = constants.L;
    in.mu = constants.mu;
    in.eta = 0.1;
    in.I = epochs;
    in.p = task.weights();
    in.rho = plan.success_matrix();
    in.sigma_bar_sq = constants.sigma_bar_sq;
    in.tau = calibrate_tau(in.rho);
    const auto z = zeta_constants(in);
    const double objective = routing::routing_objective(plan, in.p);

    const int rounds = 20, trajectories = 10000;
    std::vector<double> delta(rounds + 1, 0.0), w2_max(rounds + 1, 0.0);
    const VectorXd w0 = VectorXd::Constant(4, 3.0);
    delta[0] = (w0 - constants.optimum).squaredNorm();
    for (int traj = 0; traj < trajectories; ++traj) {
      auto state = protocol::initial_state(task, w0, in.eta, epochs);
      Rng rng(derive_seed(77, "testbed", {static_cast<std::uint64_t>(traj)}));
      for (int t = 1; t <= rounds; ++t) {
        const auto out = protocol::run_round_raa(state, task, plan, protocol::Scheme::CoeffNormalization, rng);
        delta[t] += (out.virtual_average - constants.optimum).squaredNorm() / trajectories;
        w2_max[t] = std::max(w2_max[t], energy(out.trained, k));
      }
    }
    for (int t = 1; t <= rounds; ++t) {
      CAPTURE(t);
      const double w2 = std::max(w2_max[t], t > 1 ? w2_max[t - 1] : 0.0);
      CHECK(delta[t] <= theorem1_rhs(in, z, delta[t - 1], w2, objective));
    }
  }
}

TEST_CASE("spectral norm never exceeds the Frobenius norm") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const auto p = random_weights(n, rng);
    const auto e = protocol::sample_successes(random_rho(n, rng), 1, rng);
    const MatrixXd lambda = bias_matrix(p, e, 0);
    CHECK(spectral_norm_sq(lambda) <= lambda.squaredNorm() * (1 + 1e-12));
  }
}
