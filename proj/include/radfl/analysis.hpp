#pragma once

#include "radfl/protocol.hpp"
#include "radfl/routing.hpp"
#include "radfl/seeding.hpp"
#include "radfl/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace radfl::analysis {

/// Neumaier-compensated running sum.
class KahanSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Runs `trials` calls of `draw` split into fixed-size chunks, each chunk on
/// its own stream derive_seed(seed, stage, {chunk}). Chunk sums are combined
/// in chunk order, so the result does not depend on `jobs`.
/// `draw` adds one sample per call into `out` (length `width`).
void monte_carlo(std::uint64_t trials, std::uint64_t seed, const std::string& stage, std::size_t width,
                 const std::function<void(Rng&, std::span<double>)>& draw,
                 std::vector<double>& sum, std::vector<double>& sum_sq, int jobs = 1);

// -- bias matrix ---------------------------------------------------------------

/// Lambda = p 1' - C, entry (m, n) = p_m - C(m, n).
MatrixXd bias_from_coefficients(std::span<const double> p, const MatrixXd& coefficients);
/// Bias matrix of segment l under coefficient normalization.
MatrixXd bias_matrix(std::span<const double> p, const protocol::SuccessTensor& e, Eigen::Index l);
/// Squared spectral norm (largest singular value squared).
double spectral_norm_sq(const MatrixXd& a);

// -- bias second-moment bounds ------------------------------------------------

struct Lemma3Bounds {
  MatrixXd entry;           // bound on E[lambda_{m,n}^2]
  MatrixXd entry_std_error; // zero when exact
  double norm_bound = 0.0;  // sum_n sum_m (1 - rho)(p_m^2 + p_m)
  bool exact = true;
  bool size_warning = false;  // N above the exact-enumeration limit
};

inline constexpr std::size_t kExactLemma3Limit = 12;

/// Entry bounds by subset enumeration for N <= 12, otherwise by sampling
/// `samples` success patterns per (j, n) term.
Lemma3Bounds lemma3_bounds(std::span<const double> p, const MatrixXd& rho, std::uint64_t seed = 0,
                           std::uint64_t samples = 200000);

struct BiasMoments {
  MatrixXd mean_entry_sq;
  MatrixXd entry_std_error;
  double mean_norm_sq = 0.0;
  double norm_std_error = 0.0;
};

/// Empirical E[lambda^2] and E||Lambda||^2 under coefficient normalization
/// over `draws` independent single-segment success patterns.
BiasMoments empirical_bias_moments(std::span<const double> p, const MatrixXd& rho, std::uint64_t draws,
                                   std::uint64_t seed, int jobs = 1);

// -- convergence bound -----------------------------------------------------------

struct BoundInputs {
  double L = 1.0;
  double mu = 1.0;
  double eta = 0.1;
  int I = 1;
  double tau = 0.0;
  std::vector<double> p;
  MatrixXd rho;
  double sigma_bar_sq = 0.0;
};

/// Throws InvalidBoundInputs.
void validate(const BoundInputs& in);

struct Zeta {
  double z1 = 0.0, z2 = 0.0, z3 = 0.0, z4 = 0.0;
};

/// The four one-round coefficients. The divided differences
/// (a^{I-1} - b^{I-1}) / (a - b) are summed as a geometric series so that
/// a == b and a == 1 need no special casing.
Zeta zeta_constants(const BoundInputs& in);

/// zeta3 N ||diag p||^2 + zeta3 eta L ||diag p|| + zeta4 ||diag(sqrt p - p)||^2.
double bias_factor(const BoundInputs& in, const Zeta& z);

/// zeta1 delta_prev + zeta2 sigma_bar^2 + bias_factor * sum_w2 * objective.
double theorem1_rhs(const BoundInputs& in, const Zeta& z, double delta_prev, double sum_w2,
                    double objective);

struct Asymptote {
  bool divergent = false;
  double value = 0.0;
};

/// zeta2 sigma^2 / (1 - zeta1) + zeta1 / (1 - zeta1) * objective * lambda_max * bias_factor
/// under a stationary success matrix.
Asymptote theorem2_asymptote(const BoundInputs& in, const Zeta& z, double lambda_max, double objective);

/// Partial sum over t = 1..terms of the same series (for checking the closed form).
double theorem2_partial_sum(const BoundInputs& in, const Zeta& z, double lambda_max, double objective,
                            int terms);

/// Default noise level: max (1 - rho(m, n)).
double calibrate_tau(const MatrixXd& rho);

struct BoundReport {
  Zeta zeta;
  double bias_factor = 0.0;
  double objective = 0.0;
  Lemma3Bounds lemma3;
  std::optional<Asymptote> theorem2;
};

BoundReport bound_report(const BoundInputs& in, std::optional<double> lambda_max = std::nullopt);

// -- coefficient distribution ----------------------------------------------------

struct PairStats {
  std::size_t src = 0, dst = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::array<double, 5> quantiles{};  // 5%, 25%, 50%, 75%, 95%
  std::vector<std::uint64_t> histogram;
};

struct CoefficientDistribution {
  int bins = 20;  // equal width on [0, 1]
  std::vector<PairStats> pairs;  // every ordered pair, including m == n
};

/// Samples `trials` single-segment success patterns from the plan and
/// tabulates the normalized coefficients p_{m,n}.
CoefficientDistribution coefficient_distribution(std::span<const double> p,
                                                 const routing::RoutePlan& plan,
                                                 std::uint64_t trials, std::uint64_t seed,
                                                 int bins = 20);

}  // namespace radfl::analysis
