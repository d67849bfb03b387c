#pragma once

#include "radfl/types.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace radfl::learning {

// -- segmentation ------------------------------------------------------------

/// ceil(M / K).
Eigen::Index segment_count(Eigen::Index dim, int segment_size);

struct SegmentRange {
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

/// Segment l covers [lK, min((l+1)K, M)).
SegmentRange segment_range(Eigen::Index dim, int segment_size, Eigen::Index l);

/// A flat parameter vector partitioned into packets of `segment_size` elements.
class ModelVector {
 public:
  ModelVector(VectorXd params, int segment_size);

  const VectorXd& params() const { return params_; }
  VectorXd& params() { return params_; }
  Eigen::Index dim() const { return params_.size(); }
  int segment_size() const { return segment_size_; }
  Eigen::Index num_segments() const { return segment_count(dim(), segment_size_); }

  auto segment(Eigen::Index l) const {
    const auto r = segment_range(dim(), segment_size_, l);
    return params_.segment(r.begin, r.size);
  }
  auto segment(Eigen::Index l) {
    const auto r = segment_range(dim(), segment_size_, l);
    return params_.segment(r.begin, r.size);
  }

  std::vector<VectorXd> split() const;
  static ModelVector reassemble(std::span<const VectorXd> segments, int segment_size);

 private:
  VectorXd params_;
  int segment_size_;
};

// -- tasks -------------------------------------------------------------------

/// F_n(w) = 1/2 w'A_n w - b_n'w + c_n, with c_n making min F_n = 0.
struct QuadraticTask {
  std::vector<MatrixXd> A;
  std::vector<VectorXd> b;
  std::vector<double> offset;
};

/// L2-regularized binary logistic regression, labels in {0, 1}.
struct LogisticTask {
  std::vector<MatrixXd> features;  // D_n x d per client
  std::vector<VectorXd> labels;
  double l2 = 0.0;
};

/// One tanh hidden layer with a logistic output. Parameter layout:
/// [W1 (hidden x d, row-major) | b1 (hidden) | w2 (hidden) | b2].
struct MlpTask {
  std::vector<MatrixXd> features;
  std::vector<VectorXd> labels;
  int hidden = 8;
  double l2 = 0.0;
};

class Task {
 public:
  using Variant = std::variant<QuadraticTask, LogisticTask, MlpTask>;

  Task(Variant variant, std::vector<double> data_sizes);

  std::size_t num_clients() const { return p_.size(); }
  Eigen::Index dim() const { return dim_; }
  const std::vector<double>& weights() const { return p_; }
  const std::vector<double>& data_sizes() const { return sizes_; }
  const Variant& variant() const { return variant_; }
  const QuadraticTask* quadratic() const { return std::get_if<QuadraticTask>(&variant_); }
  const char* kind() const;

  double loss(std::size_t n, const VectorXd& w) const;
  VectorXd gradient(std::size_t n, const VectorXd& w) const;
  /// Fraction of correctly classified samples; NaN for quadratic tasks.
  double accuracy(std::size_t n, const VectorXd& w) const;

 private:
  Variant variant_;
  std::vector<double> p_;
  std::vector<double> sizes_;
  Eigen::Index dim_ = 0;
};

/// sum_n p_n F_n(w).
double global_loss(const Task& task, const VectorXd& w);
double global_accuracy(const Task& task, const VectorXd& w);

/// I full-batch gradient steps from `start`. Throws NonFiniteGradient.
VectorXd local_train(const Task& task, std::size_t n, const VectorXd& start, int epochs,
                     double learning_rate);

/// (sum p_n A_n)^{-1} sum p_n b_n.
VectorXd quadratic_optimum(const Task& task);

struct TaskConstants {
  double L = 0.0;
  double mu = 0.0;
  std::vector<double> sigma;  // per client
  double sigma_bar_sq = 0.0;
  double domain_radius = 0.0; // ball around w* over which sigma_n is maximized
  VectorXd optimum;
};

/// L = max lambda_max(A_n), mu = min lambda_min(A_n); sigma_n maximizes
/// ||grad F_n - grad F|| over the ball of radius 10||w*|| + 1 around w*.
TaskConstants task_constants(const Task& task);

/// max ||D u + c|| over ||u|| <= radius, D symmetric.
double max_affine_norm_on_ball(const MatrixXd& D, const VectorXd& c, double radius);

// -- synthetic generators ----------------------------------------------------

struct QuadraticSpec {
  std::size_t clients = 10;
  Eigen::Index dim = 32;
  double eig_lo = 0.5;
  double eig_hi = 2.0;
  double heterogeneity = 1.0;  // spread of local optima
  int min_samples = 20;
  int max_samples = 100;
};
Task generate_quadratic(const QuadraticSpec& spec, std::uint64_t seed);

struct ClassifierSpec {
  std::size_t clients = 10;
  Eigen::Index features = 15;  // bias column added on top
  double heterogeneity = 1.0;
  int min_samples = 20;
  int max_samples = 100;
  double l2 = 1e-2;
  int hidden = 8;              // MLP only
};
Task generate_logistic(const ClassifierSpec& spec, std::uint64_t seed);
Task generate_mlp(const ClassifierSpec& spec, std::uint64_t seed);

/// Deterministic small-scale initial model (zeros for convex tasks, small
/// seeded values for the MLP so that hidden units are not symmetric).
VectorXd initial_model(const Task& task, std::uint64_t seed);

}  // namespace radfl::learning
