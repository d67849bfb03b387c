#include "radfl/protocol.hpp"

#include "radfl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace radfl::protocol {

const char* to_string(Scheme s) {
  return s == Scheme::CoeffNormalization ? "coeff-normalization" : "model-substitution";
}

const char* to_string(Kind k) {
  switch (k) {
    case Kind::RouteAndAggregate: return "raa";
    case Kind::Gossip: return "aayg";
    default: return "cfl";
  }
}

Scheme parse_scheme(const std::string& name) {
  if (name == "coeff-normalization") return Scheme::CoeffNormalization;
  if (name == "model-substitution") return Scheme::ModelSubstitution;
  throw Error("ConfigError", "unknown aggregation scheme '" + name + "'");
}

Kind parse_kind(const std::string& name) {
  if (name == "raa") return Kind::RouteAndAggregate;
  if (name == "aayg") return Kind::Gossip;
  if (name == "cfl") return Kind::Centralized;
  throw Error("ConfigError", "unknown protocol '" + name + "'");
}

SuccessTensor::SuccessTensor(std::size_t clients, Eigen::Index segments)
    : n_(clients), segments_(segments), bits_(clients * clients * static_cast<std::size_t>(segments), 1) {}

void SuccessTensor::set(std::size_t m, std::size_t n, Eigen::Index l, bool ok) {
  require(m != n || ok, "DomainError", "a client always holds its own segments");
  bits_[index(m, n, l)] = ok ? 1 : 0;
}

// Each element survives with the single-element rate and a segment arrives
// when all of its elements do. Every element consumes one draw, so runs that
// differ only in K see the same random numbers.
static bool segment_arrives(Rng& rng, double element_success, Eigen::Index length) {
  bool ok = true;
  for (Eigen::Index i = 0; i < length; ++i) ok = (rng.uniform() < element_success) && ok;
  return ok;
}

SuccessTensor sample_successes(const MatrixXd& rho, Eigen::Index segments, Rng& rng) {
  require(rho.rows() == rho.cols(), "DomainError", "success matrix must be square");
  const auto n = static_cast<std::size_t>(rho.rows());
  SuccessTensor e(n, segments);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t k = 0; k < n; ++k) {
      if (m == k) continue;
      const double r = rho(m, k);
      for (Eigen::Index l = 0; l < segments; ++l) e.set(m, k, l, rng.uniform() < r);
    }
  return e;
}

SuccessTensor sample_successes(const routing::RoutePlan& plan, Eigen::Index model_dim, Rng& rng) {
  require(model_dim >= 1, "DomainError", "model dimension must be >= 1");
  const int k_size = plan.elements();
  const Eigen::Index segments = learning::segment_count(model_dim, k_size);
  const std::size_t n = plan.size();
  SuccessTensor e(n, segments);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t k = 0; k < n; ++k) {
      if (m == k) continue;
      const double q = plan.segment_success(m, k, 1);
      for (Eigen::Index l = 0; l < segments; ++l)
        e.set(m, k, l, segment_arrives(rng, q, learning::segment_range(model_dim, k_size, l).size));
    }
  return e;
}

MatrixXd coefficient_matrix(std::span<const double> p, const SuccessTensor& e, Eigen::Index l,
                            Scheme scheme) {
  const std::size_t n = p.size();
  require(e.clients() == n, "DomainError", "weights and success tensor disagree");
  MatrixXd c = MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    if (scheme == Scheme::CoeffNormalization) {
      double den = 0.0;
      for (std::size_t m = 0; m < n; ++m)
        if (e(m, k, l)) den += p[m];
      // own segment always arrives, so den >= p_k > 0
      for (std::size_t m = 0; m < n; ++m)
        if (e(m, k, l)) c(static_cast<Eigen::Index>(m), col) = p[m] / den;
    } else {
      double lost = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        if (e(m, k, l))
          c(static_cast<Eigen::Index>(m), col) += p[m];
        else
          lost += p[m];
      }
      c(col, col) += lost;
    }
  }
  return c;
}

std::vector<VectorXd> apply_coefficients(std::span<const VectorXd> models,
                                         std::span<const MatrixXd> coefficients, int segment_size) {
  require(!models.empty(), "DomainError", "no models");
  const Eigen::Index dim = models[0].size();
  const std::size_t n = models.size();
  require(static_cast<Eigen::Index>(coefficients.size()) == learning::segment_count(dim, segment_size),
          "DomainError", "one coefficient matrix per segment required");
  std::vector<VectorXd> out(n, VectorXd::Zero(dim));
  for (std::size_t l = 0; l < coefficients.size(); ++l) {
    const auto r = learning::segment_range(dim, segment_size, static_cast<Eigen::Index>(l));
    const MatrixXd& c = coefficients[l];
    for (std::size_t k = 0; k < n; ++k)
      for (Eigen::Index i = r.begin; i < r.begin + r.size; ++i) {
        double acc = 0.0;
        for (std::size_t m = 0; m < n; ++m)
          acc += c(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) * models[m](i);
        out[k](i) = acc;
      }
  }
  return out;
}

std::vector<VectorXd> aggregate_raa(std::span<const VectorXd> models, std::span<const double> p,
                                    const SuccessTensor& e, Scheme scheme, int segment_size) {
  require(models.size() == p.size(), "DomainError", "one weight per model required");
  for (const auto& w : models)
    require(w.size() == models[0].size(), "DomainError", "model dimensions differ");
  std::vector<MatrixXd> c;
  for (Eigen::Index l = 0; l < e.segments(); ++l) c.push_back(coefficient_matrix(p, e, l, scheme));
  return apply_coefficients(models, c, segment_size);
}

TrainState initial_state(const learning::Task& task, const VectorXd& initial, double learning_rate,
                         int epochs) {
  require(initial.size() == task.dim(), "DomainError", "initial model dimension mismatch");
  require(epochs >= 1, "DomainError", "epochs must be >= 1");
  require(learning_rate > 0.0, "DomainError", "learning rate must be positive");
  if (const auto* q = task.quadratic()) {
    double L = 0.0;
    for (const auto& A : q->A)
      L = std::max(L, Eigen::SelfAdjointEigenSolver<MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff());
    require(learning_rate < 1.0 / (2.0 * L), "DomainError", "learning rate must be below 1/(2L)");
  }
  TrainState s;
  s.models.assign(task.num_clients(), initial);
  s.learning_rate = learning_rate;
  s.epochs = epochs;
  return s;
}

std::vector<VectorXd> train_all(const TrainState& state, const learning::Task& task) {
  require(state.models.size() == task.num_clients(), "DomainError", "one model per client required");
  std::vector<VectorXd> out;
  out.reserve(state.models.size());
  for (std::size_t n = 0; n < state.models.size(); ++n)
    out.push_back(learning::local_train(task, n, state.models[n], state.epochs, state.learning_rate));
  return out;
}

VectorXd weighted_average(std::span<const VectorXd> models, std::span<const double> p) {
  VectorXd avg = VectorXd::Zero(models[0].size());
  for (std::size_t n = 0; n < models.size(); ++n) avg += p[n] * models[n];
  return avg;
}

namespace {

RoundOutcome begin_round(TrainState& state, const learning::Task& task, Overhead overhead) {
  RoundOutcome out;
  out.round = state.round + 1;
  out.trained = train_all(state, task);
  out.virtual_average = weighted_average(out.trained, task.weights());
  out.overhead = overhead;
  return out;
}

void finish_round(TrainState& state, RoundOutcome& out, int segment_size) {
  out.aggregated = apply_coefficients(out.trained, out.coefficients, segment_size);
  state.models = out.aggregated;
  state.round = out.round;
}

}  // namespace

RoundOutcome run_round_raa(TrainState& state, const learning::Task& task,
                           const routing::RoutePlan& plan, Scheme scheme, Rng& rng,
                           Overhead overhead) {
  require(plan.size() == task.num_clients(), "DomainError", "plan and task disagree on N");
  RoundOutcome out = begin_round(state, task, overhead);
  out.successes = sample_successes(plan, task.dim(), rng);
  for (Eigen::Index l = 0; l < out.successes->segments(); ++l)
    out.coefficients.push_back(coefficient_matrix(task.weights(), *out.successes, l, scheme));
  finish_round(state, out, plan.elements());
  return out;
}

RoundOutcome run_round_aayg(TrainState& state, const learning::Task& task,
                            const net::NetworkGraph& graph, int rounds_j, int elements,
                            Scheme scheme, Rng& rng, Overhead overhead) {
  require(rounds_j >= 1, "DomainError", "J must be >= 1");
  require(elements >= 1, "DomainError", "K must be >= 1");
  const std::size_t n = task.num_clients();
  require(graph.num_participants() == n, "DomainError", "graph and task disagree on N");
  const auto& p = task.weights();
  const auto& parts = graph.participants();
  const Eigen::Index segments = learning::segment_count(task.dim(), elements);

  // participant-index neighbor lists with per-segment packet success
  struct Peer {
    std::size_t index;
    double element_success;
  };
  std::vector<std::vector<Peer>> peers(n);
  std::vector<int> index_of(graph.num_nodes(), -1);
  for (std::size_t i = 0; i < n; ++i) index_of[parts[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& adj : graph.neighbors(parts[i])) {
      if (index_of[adj.node] < 0) continue;
      const double eps = graph.links()[adj.link].bit_success;
      const int bits = graph.channel().bits_per_element;
      peers[i].push_back({static_cast<std::size_t>(index_of[adj.node]), net::packet_success_rate(eps, 1, bits)});
    }

  RoundOutcome out = begin_round(state, task, overhead);
  const auto nn = static_cast<Eigen::Index>(n);
  out.coefficients.assign(segments, MatrixXd::Identity(nn, nn));
  std::vector<VectorXd> current = out.trained;
  for (int j = 0; j < rounds_j; ++j) {
    // received(r, t, l): receiver r got transmitter t's segment l
    SuccessTensor received(n, segments);
    for (std::size_t t = 0; t < n; ++t)
      for (const Peer& r : peers[t])
        for (Eigen::Index l = 0; l < segments; ++l)
          received.set(t, r.index, l,
                       segment_arrives(rng, r.element_success, learning::segment_range(task.dim(), elements, l).size));

    std::vector<MatrixXd> mix(segments, MatrixXd::Zero(nn, nn));
    for (Eigen::Index l = 0; l < segments; ++l) {
      MatrixXd& a = mix[l];
      for (std::size_t r = 0; r < n; ++r) {
        const auto col = static_cast<Eigen::Index>(r);
        // closed neighborhood of r in ascending order
        std::vector<std::size_t> hood{r};
        for (const Peer& q : peers[r]) hood.push_back(q.index);
        std::sort(hood.begin(), hood.end());
        double den = 0.0;
        for (std::size_t m : hood)
          if (scheme == Scheme::ModelSubstitution || received(m, r, l)) den += p[m];
        for (std::size_t m : hood) {
          const double w = p[m] / den;
          if (received(m, r, l))
            a(static_cast<Eigen::Index>(m), col) += w;
          else if (scheme == Scheme::ModelSubstitution)
            a(col, col) += w;
        }
      }
      out.coefficients[l] = out.coefficients[l] * a;
    }
    current = apply_coefficients(current, mix, elements);
  }
  out.aggregated = current;
  state.models = current;
  state.round = out.round;
  return out;
}

RoundOutcome run_round_cfl(TrainState& state, const learning::Task& task,
                           const routing::RoutePlan& plan, std::size_t aggregator, Scheme scheme,
                           Rng& rng, Overhead overhead) {
  const std::size_t n = task.num_clients();
  require(plan.size() == n, "DomainError", "plan and task disagree on N");
  require(aggregator < n, "DomainError", "aggregator must be a participant");
  const auto& p = task.weights();
  RoundOutcome out = begin_round(state, task, overhead);

  // uplink then downlink, both sampled from the same stream
  const SuccessTensor up = sample_successes(plan, task.dim(), rng);
  const SuccessTensor down = sample_successes(plan, task.dim(), rng);
  const auto nn = static_cast<Eigen::Index>(n);
  const auto a = static_cast<Eigen::Index>(aggregator);
  for (Eigen::Index l = 0; l < up.segments(); ++l) {
    const MatrixXd at_agg = coefficient_matrix(p, up, l, scheme);
    MatrixXd c = MatrixXd::Zero(nn, nn);
    for (std::size_t k = 0; k < n; ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      if (k == aggregator || down(aggregator, k, l))
        c.col(col) = at_agg.col(a);
      else
        c(col, col) = 1.0;
    }
    out.coefficients.push_back(std::move(c));
  }
  finish_round(state, out, plan.elements());
  return out;
}

RoundMetrics evaluate(const learning::Task& task, const RoundOutcome& outcome, const VectorXd* optimum) {
  RoundMetrics m;
  const auto& models = outcome.aggregated;
  double acc = 0.0;
  for (const auto& w : models) {
    m.client_loss.push_back(learning::global_loss(task, w));
    m.mean_loss += m.client_loss.back();
    acc += learning::global_accuracy(task, w);
  }
  m.mean_loss /= static_cast<double>(models.size());
  m.mean_accuracy = acc / static_cast<double>(models.size());
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j)
      m.max_pairwise_distance = std::max(m.max_pairwise_distance, (models[i] - models[j]).norm());
  for (const auto& c : outcome.coefficients)
    m.mean_bias_norm_sq += analysis::spectral_norm_sq(analysis::bias_from_coefficients(task.weights(), c));
  if (!outcome.coefficients.empty()) m.mean_bias_norm_sq /= static_cast<double>(outcome.coefficients.size());
  m.virtual_distance = optimum ? (outcome.virtual_average - *optimum).norm()
                               : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace radfl::protocol
