#include "radfl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace radfl::analysis {

void KahanSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x))
    comp_ += (sum_ - t) + x;
  else
    comp_ += (x - t) + sum_;
  sum_ = t;
}

void monte_carlo(std::uint64_t trials, std::uint64_t seed, const std::string& stage, std::size_t width,
                 const std::function<void(Rng&, std::span<double>)>& draw,
                 std::vector<double>& sum, std::vector<double>& sum_sq, int jobs) {
  constexpr std::uint64_t chunk = 4096;
  const std::uint64_t chunks = (trials + chunk - 1) / chunk;
  std::vector<std::vector<double>> part_sum(chunks, std::vector<double>(width, 0.0));
  std::vector<std::vector<double>> part_sq(chunks, std::vector<double>(width, 0.0));

  auto run_chunk = [&](std::uint64_t c) {
    Rng rng(derive_seed(seed, stage, {c}));
    std::vector<double> sample(width);
    const std::uint64_t count = std::min(chunk, trials - c * chunk);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::fill(sample.begin(), sample.end(), 0.0);
      draw(rng, sample);
      for (std::size_t k = 0; k < width; ++k) {
        part_sum[c][k] += sample[k];
        part_sq[c][k] += sample[k] * sample[k];
      }
    }
  };

  const auto workers = static_cast<std::uint64_t>(std::max(1, jobs));
  if (workers == 1) {
    for (std::uint64_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::uint64_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::uint64_t c = w; c < chunks; c += workers) run_chunk(c);
      });
    for (auto& t : pool) t.join();
  }

  sum.assign(width, 0.0);
  sum_sq.assign(width, 0.0);
  for (std::size_t k = 0; k < width; ++k) {
    KahanSum s, q;
    for (std::uint64_t c = 0; c < chunks; ++c) {
      s.add(part_sum[c][k]);
      q.add(part_sq[c][k]);
    }
    sum[k] = s.value();
    sum_sq[k] = q.value();
  }
}

namespace {

double std_error(double sum, double sum_sq, double count) {
  const double mean = sum / count;
  const double var = std::max(0.0, sum_sq / count - mean * mean);
  return std::sqrt(var / count);
}

}  // namespace

MatrixXd bias_from_coefficients(std::span<const double> p, const MatrixXd& c) {
  require(static_cast<std::size_t>(c.rows()) == p.size() && c.rows() == c.cols(), "DomainError",
          "coefficient matrix must be N x N");
  MatrixXd lambda(c.rows(), c.cols());
  for (Eigen::Index m = 0; m < c.rows(); ++m)
    for (Eigen::Index n = 0; n < c.cols(); ++n) lambda(m, n) = p[m] - c(m, n);
  return lambda;
}

MatrixXd bias_matrix(std::span<const double> p, const protocol::SuccessTensor& e, Eigen::Index l) {
  return bias_from_coefficients(p, protocol::coefficient_matrix(p, e, l, protocol::Scheme::CoeffNormalization));
}

double spectral_norm_sq(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  const double s = Eigen::JacobiSVD<MatrixXd>(a).singularValues()(0);
  return s * s;
}

// -- bias second-moment bounds ------------------------------------------------

namespace {

void check_weights_and_rho(std::span<const double> p, const MatrixXd& rho) {
  require(!p.empty(), "InvalidBoundInputs", "empty weights");
  require(rho.rows() == static_cast<Eigen::Index>(p.size()) && rho.cols() == rho.rows(),
          "InvalidBoundInputs", "success matrix must be N x N");
  for (double w : p) require(w > 0.0, "InvalidBoundInputs", "weights must be positive");
  for (Eigen::Index i = 0; i < rho.rows(); ++i) {
    require(rho(i, i) == 1.0, "InvalidBoundInputs", "success matrix diagonal must be 1");
    for (Eigen::Index j = 0; j < rho.cols(); ++j)
      require(rho(i, j) >= 0.0 && rho(i, j) <= 1.0, "InvalidBoundInputs",
              "success rates must lie in [0, 1]");
  }
}

// E[p_m / (p_m + sum of successful p_k)] over k outside {j, m}, exact.
double subset_expectation(std::span<const double> p, const MatrixXd& rho, std::size_t m,
                          std::size_t j, std::size_t n) {
  double fixed = p[m];
  std::vector<std::size_t> random;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k == m || k == j) continue;
    const double r = rho(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    if (r >= 1.0)
      fixed += p[k];
    else if (r > 0.0)
      random.push_back(k);
  }
  const std::size_t count = random.size();
  KahanSum total;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << count); ++mask) {
    double prob = 1.0, den = fixed;
    for (std::size_t i = 0; i < count; ++i) {
      const double r = rho(static_cast<Eigen::Index>(random[i]), static_cast<Eigen::Index>(n));
      if (mask >> i & 1) {
        prob *= r;
        den += p[random[i]];
      } else {
        prob *= 1.0 - r;
      }
    }
    total.add(prob * p[m] / den);
  }
  return total.value();
}

}  // namespace

Lemma3Bounds lemma3_bounds(std::span<const double> p, const MatrixXd& rho, std::uint64_t seed,
                           std::uint64_t samples) {
  check_weights_and_rho(p, rho);
  const std::size_t n_clients = p.size();
  const auto nn = static_cast<Eigen::Index>(n_clients);
  Lemma3Bounds out;
  out.entry = MatrixXd::Zero(nn, nn);
  out.entry_std_error = MatrixXd::Zero(nn, nn);
  out.exact = n_clients <= kExactLemma3Limit;
  out.size_warning = !out.exact;

  for (std::size_t n = 0; n < n_clients; ++n)
    for (std::size_t m = 0; m < n_clients; ++m) out.norm_bound += (1.0 - rho(m, n)) * (p[m] * p[m] + p[m]);

  if (out.exact) {
    for (std::size_t n = 0; n < n_clients; ++n)
      for (std::size_t m = 0; m < n_clients; ++m) {
        const auto mi = static_cast<Eigen::Index>(m), ni = static_cast<Eigen::Index>(n);
        double bound = (1.0 - rho(mi, ni)) * p[m] * p[m];
        for (std::size_t j = 0; j < n_clients; ++j) {
          const double miss = 1.0 - rho(static_cast<Eigen::Index>(j), ni);
          if (j == m || miss <= 0.0 || rho(mi, ni) <= 0.0) continue;
          bound += p[j] * miss * rho(mi, ni) * subset_expectation(p, rho, m, j, n);
        }
        out.entry(mi, ni) = bound;
      }
    return out;
  }

  // shared success patterns per receiver n; every (m, j) term reuses them
  require(samples >= 2, "DomainError", "need at least two samples");
  for (std::size_t n = 0; n < n_clients; ++n) {
    const auto ni = static_cast<Eigen::Index>(n);
    std::vector<double> sum, sum_sq;
    monte_carlo(samples, derive_seed(seed, "lemma3", {n}), "lemma3-chunk", n_clients,
                [&](Rng& rng, std::span<double> x) {
                  std::vector<double> ok(n_clients);
                  double total = 0.0;
                  for (std::size_t k = 0; k < n_clients; ++k) {
                    ok[k] = rng.uniform() < rho(static_cast<Eigen::Index>(k), ni) ? 1.0 : 0.0;
                    total += ok[k] * p[k];
                  }
                  for (std::size_t m = 0; m < n_clients; ++m) {
                    const auto mi = static_cast<Eigen::Index>(m);
                    double v = 0.0;
                    for (std::size_t j = 0; j < n_clients; ++j) {
                      const double miss = 1.0 - rho(static_cast<Eigen::Index>(j), ni);
                      if (j == m || miss <= 0.0) continue;
                      const double den = p[m] + total - ok[j] * p[j] - ok[m] * p[m];
                      v += p[j] * miss * rho(mi, ni) * p[m] / den;
                    }
                    x[m] = v;
                  }
                },
                sum, sum_sq);
    const auto count = static_cast<double>(samples);
    for (std::size_t m = 0; m < n_clients; ++m) {
      const auto mi = static_cast<Eigen::Index>(m);
      out.entry(mi, ni) = (1.0 - rho(mi, ni)) * p[m] * p[m] + sum[m] / count;
      out.entry_std_error(mi, ni) = std_error(sum[m], sum_sq[m], count);
    }
  }
  return out;
}

BiasMoments empirical_bias_moments(std::span<const double> p, const MatrixXd& rho, std::uint64_t draws,
                                   std::uint64_t seed, int jobs) {
  check_weights_and_rho(p, rho);
  require(draws >= 2, "DomainError", "need at least two draws");
  const std::size_t n = p.size();
  const auto nn = static_cast<Eigen::Index>(n);
  std::vector<double> sum, sum_sq;
  monte_carlo(draws, seed, "bias-moments", n * n + 1,
              [&](Rng& rng, std::span<double> x) {
                const auto e = protocol::sample_successes(rho, 1, rng);
                const MatrixXd lambda = bias_matrix(p, e, 0);
                for (Eigen::Index m = 0; m < nn; ++m)
                  for (Eigen::Index k = 0; k < nn; ++k)
                    x[static_cast<std::size_t>(m * nn + k)] = lambda(m, k) * lambda(m, k);
                x[n * n] = spectral_norm_sq(lambda);
              },
              sum, sum_sq, jobs);
  BiasMoments out;
  out.mean_entry_sq = MatrixXd::Zero(nn, nn);
  out.entry_std_error = MatrixXd::Zero(nn, nn);
  const auto count = static_cast<double>(draws);
  for (Eigen::Index m = 0; m < nn; ++m)
    for (Eigen::Index k = 0; k < nn; ++k) {
      const auto i = static_cast<std::size_t>(m * nn + k);
      out.mean_entry_sq(m, k) = sum[i] / count;
      out.entry_std_error(m, k) = std_error(sum[i], sum_sq[i], count);
    }
  out.mean_norm_sq = sum[n * n] / count;
  out.norm_std_error = std_error(sum[n * n], sum_sq[n * n], count);
  return out;
}

// -- convergence bound ---------------------------------------------------------

void validate(const BoundInputs& in) {
  const char* kind = "InvalidBoundInputs";
  require(std::isfinite(in.L) && in.L > 0.0, kind, "L must be positive");
  require(std::isfinite(in.mu) && in.mu > 0.0 && in.mu <= in.L, kind, "mu must lie in (0, L]");
  require(in.eta > 0.0 && in.eta < 1.0 / (2.0 * in.L), kind, "eta must lie in (0, 1/(2L))");
  require(in.I >= 1, kind, "I must be >= 1");
  require(std::isfinite(in.tau) && in.tau >= 0.0, kind, "tau must be nonnegative");
  require(std::isfinite(in.sigma_bar_sq) && in.sigma_bar_sq >= 0.0, kind, "sigma_bar^2 must be nonnegative");
  check_weights_and_rho(in.p, in.rho);
  double total = 0.0;
  for (double w : in.p) total += w;
  require(std::abs(total - 1.0) <= 1e-9, kind, "weights must sum to 1");
}

namespace {

// (x^k - y^k) / (x - y) as sum_{i<k} x^i y^{k-1-i}
double divided_power(double x, double y, int k) {
  KahanSum s;
  for (int i = 0; i < k; ++i) s.add(std::pow(x, i) * std::pow(y, k - 1 - i));
  return s.value();
}

// D(a, b, k) - D(a, 1, k) = sum_i a^i (b^{k-1-i} - 1)
double divided_power_gap(double a, double b, int k) {
  const double log_b = std::log1p(b - 1.0);
  KahanSum s;
  for (int i = 0; i < k; ++i) s.add(std::pow(a, i) * std::expm1(static_cast<double>(k - 1 - i) * log_b));
  return s.value();
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

Zeta zeta_constants(const BoundInputs& in) {
  const double L = in.L, mu = in.mu, eta = in.eta;
  const int k = in.I - 1;
  const double a = (1.0 + eta) * (1.0 + 4.0 * L * L * eta);
  const double b = 1.0 - 1.5 * mu * eta + 2.0 * L * mu * eta * eta;
  const double bk = std::pow(b, k);
  const double c0 = (2.0 * eta * eta * L * L + (L + mu) * eta) * a * a;
  Zeta z;
  z.z1 = bk * (1.0 + in.tau) * (1.0 - 2.0 * mu * eta + eta * eta * L * L);
  z.z2 = 2.0 * (1.0 + eta) * c0 / (1.0 + 4.0 * L * L + 4.0 * L * L * eta) * divided_power_gap(a, b, k);
  z.z3 = bk * (1.0 + 1.0 / in.tau) * (1.0 + eta * L);
  z.z4 = c0 * divided_power(a, b, k);
  return z;
}

double bias_factor(const BoundInputs& in, const Zeta& z) {
  const double pmax = max_abs(in.p);
  std::vector<double> gap;
  for (double w : in.p) gap.push_back(std::sqrt(w) - w);
  const double g = max_abs(gap);
  const auto n = static_cast<double>(in.p.size());
  return z.z3 * n * pmax * pmax + z.z3 * in.eta * in.L * pmax + z.z4 * g * g;
}

double theorem1_rhs(const BoundInputs& in, const Zeta& z, double delta_prev, double sum_w2,
                    double objective) {
  require(delta_prev >= 0.0 && sum_w2 >= 0.0 && objective >= 0.0, "DomainError",
          "bound arguments must be nonnegative");
  double rhs = z.z1 * delta_prev + z.z2 * in.sigma_bar_sq;
  // an error-free plan contributes nothing, even when tau = 0 makes zeta3 infinite
  if (sum_w2 * objective > 0.0) rhs += bias_factor(in, z) * sum_w2 * objective;
  return rhs;
}

Asymptote theorem2_asymptote(const BoundInputs& in, const Zeta& z, double lambda_max, double objective) {
  require(lambda_max >= 0.0 && objective >= 0.0, "DomainError", "bound arguments must be nonnegative");
  Asymptote a;
  if (z.z1 >= 1.0) {
    a.divergent = true;
    a.value = std::numeric_limits<double>::infinity();
    return a;
  }
  a.value = z.z2 * in.sigma_bar_sq / (1.0 - z.z1);
  if (lambda_max * objective > 0.0)
    a.value += z.z1 / (1.0 - z.z1) * objective * lambda_max * bias_factor(in, z);
  return a;
}

double theorem2_partial_sum(const BoundInputs& in, const Zeta& z, double lambda_max, double objective,
                            int terms) {
  require(z.z1 < 1.0, "Divergent", "zeta1 >= 1");
  double total = z.z2 * in.sigma_bar_sq / (1.0 - z.z1);
  if (lambda_max * objective <= 0.0) return total;
  const double scale = objective * lambda_max * bias_factor(in, z);
  KahanSum s;
  double power = 1.0;
  for (int t = 1; t <= terms; ++t) {
    power *= z.z1;
    s.add(power * scale);
  }
  return total + s.value();
}

double calibrate_tau(const MatrixXd& rho) {
  double tau = 0.0;
  for (Eigen::Index i = 0; i < rho.size(); ++i) tau = std::max(tau, 1.0 - rho.data()[i]);
  return tau;
}

BoundReport bound_report(const BoundInputs& in, std::optional<double> lambda_max) {
  validate(in);
  BoundReport r;
  r.zeta = zeta_constants(in);
  r.bias_factor = bias_factor(in, r.zeta);
  r.objective = routing::routing_objective(in.rho, in.p);
  r.lemma3 = lemma3_bounds(in.p, in.rho);
  if (lambda_max) r.theorem2 = theorem2_asymptote(in, r.zeta, *lambda_max, r.objective);
  return r;
}

// -- coefficient distribution --------------------------------------------------

CoefficientDistribution coefficient_distribution(std::span<const double> p, const routing::RoutePlan& plan,
                                                 std::uint64_t trials, std::uint64_t seed, int bins) {
  require(trials >= 1, "DomainError", "trials must be >= 1");
  require(bins >= 1, "DomainError", "bins must be >= 1");
  require(plan.size() == p.size(), "DomainError", "plan and weights disagree on N");
  const std::size_t n = p.size();
  const MatrixXd rho = plan.success_matrix();
  constexpr int fine_bins = 10000;  // quantile resolution

  struct Acc {
    double mean = 0.0, m2 = 0.0, lo = 1.0, hi = 0.0;
    std::vector<std::uint64_t> fine = std::vector<std::uint64_t>(fine_bins, 0);
  };
  std::vector<Acc> acc(n * n);
  auto bin_of = [](double x, int count) { return std::clamp(static_cast<int>(x * count), 0, count - 1); };

  Rng rng(seed);
  for (std::uint64_t t = 0; t < trials; ++t) {
    const auto e = protocol::sample_successes(rho, 1, rng);
    const MatrixXd c = protocol::coefficient_matrix(p, e, 0, protocol::Scheme::CoeffNormalization);
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t k = 0; k < n; ++k) {
        Acc& a = acc[m * n + k];
        const double x = c(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
        const double delta = x - a.mean;
        a.mean += delta / static_cast<double>(t + 1);
        a.m2 += delta * (x - a.mean);
        a.lo = std::min(a.lo, x);
        a.hi = std::max(a.hi, x);
        ++a.fine[bin_of(x, fine_bins)];
      }
  }

  CoefficientDistribution out;
  out.bins = bins;
  const std::array<double, 5> levels{0.05, 0.25, 0.5, 0.75, 0.95};
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t k = 0; k < n; ++k) {
      const Acc& a = acc[m * n + k];
      PairStats s;
      s.src = m;
      s.dst = k;
      s.mean = a.mean;
      s.variance = a.m2 / static_cast<double>(trials);
      s.histogram.assign(bins, 0);
      for (int f = 0; f < fine_bins; ++f)
        s.histogram[bin_of((f + 0.5) / fine_bins, bins)] += a.fine[f];
      for (std::size_t q = 0; q < levels.size(); ++q) {
        const double target = levels[q] * static_cast<double>(trials);
        std::uint64_t seen = 0;
        int f = 0;
        for (; f < fine_bins; ++f) {
          seen += a.fine[f];
          if (static_cast<double>(seen) >= target) break;
        }
        s.quantiles[q] = std::clamp((f + 0.5) / fine_bins, a.lo, a.hi);
      }
      out.pairs.push_back(std::move(s));
    }
  return out;
}

}  // namespace radfl::analysis
