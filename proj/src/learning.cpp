#include "radfl/learning.hpp"

#include "radfl/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace radfl::learning {

Eigen::Index segment_count(Eigen::Index dim, int segment_size) {
  require(segment_size >= 1, "DomainError", "segment size must be >= 1");
  return (dim + segment_size - 1) / segment_size;
}

SegmentRange segment_range(Eigen::Index dim, int segment_size, Eigen::Index l) {
  const Eigen::Index begin = l * segment_size;
  require(l >= 0 && begin < dim, "DomainError", "segment index out of range");
  return {begin, std::min<Eigen::Index>(segment_size, dim - begin)};
}

ModelVector::ModelVector(VectorXd params, int segment_size)
    : params_(std::move(params)), segment_size_(segment_size) {
  require(segment_size >= 1, "DomainError", "segment size must be >= 1");
}

std::vector<VectorXd> ModelVector::split() const {
  std::vector<VectorXd> out;
  for (Eigen::Index l = 0; l < num_segments(); ++l) out.emplace_back(segment(l));
  return out;
}

ModelVector ModelVector::reassemble(std::span<const VectorXd> segments, int segment_size) {
  Eigen::Index dim = 0;
  for (const auto& s : segments) dim += s.size();
  VectorXd params(dim);
  Eigen::Index at = 0;
  for (const auto& s : segments) {
    params.segment(at, s.size()) = s;
    at += s.size();
  }
  ModelVector out(std::move(params), segment_size);
  for (std::size_t l = 0; l < segments.size(); ++l)
    require(out.segment(static_cast<Eigen::Index>(l)).size() == segments[l].size(), "DomainError",
            "segment lengths inconsistent with segment size");
  return out;
}

// -- losses --------------------------------------------------------------------

namespace {

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LossVisitor {
  std::size_t n;
  const VectorXd& w;

  double operator()(const QuadraticTask& t) const {
    return 0.5 * w.dot(t.A[n] * w) - t.b[n].dot(w) + t.offset[n];
  }
  double operator()(const LogisticTask& t) const {
    const MatrixXd& X = t.features[n];
    const VectorXd z = X * w;
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double s = t.labels[n](i) > 0.5 ? 1.0 : -1.0;
      total += softplus(-s * z(i));
    }
    return total / static_cast<double>(z.size()) + 0.5 * t.l2 * w.squaredNorm();
  }
  double operator()(const MlpTask& t) const;
};

struct MlpView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W1;
  Eigen::Map<const VectorXd> b1;
  Eigen::Map<const VectorXd> w2;
  double b2;

  MlpView(const VectorXd& w, Eigen::Index hidden, Eigen::Index d)
      : W1(w.data(), hidden, d),
        b1(w.data() + hidden * d, hidden),
        w2(w.data() + hidden * d + hidden, hidden),
        b2(w(hidden * d + 2 * hidden)) {}
};

double LossVisitor::operator()(const MlpTask& t) const {
  const MatrixXd& X = t.features[n];
  const MlpView v(w, t.hidden, X.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const VectorXd h = (v.W1 * X.row(i).transpose() + v.b1).array().tanh();
    const double z = v.w2.dot(h) + v.b2;
    const double s = t.labels[n](i) > 0.5 ? 1.0 : -1.0;
    total += softplus(-s * z);
  }
  return total / static_cast<double>(X.rows()) + 0.5 * t.l2 * w.squaredNorm();
}

struct GradientVisitor {
  std::size_t n;
  const VectorXd& w;

  VectorXd operator()(const QuadraticTask& t) const { return t.A[n] * w - t.b[n]; }
  VectorXd operator()(const LogisticTask& t) const {
    const MatrixXd& X = t.features[n];
    const VectorXd z = X * w;
    VectorXd coef(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double s = t.labels[n](i) > 0.5 ? 1.0 : -1.0;
      coef(i) = -s * sigmoid(-s * z(i));
    }
    return X.transpose() * coef / static_cast<double>(z.size()) + t.l2 * w;
  }
  VectorXd operator()(const MlpTask& t) const {
    const MatrixXd& X = t.features[n];
    const Eigen::Index d = X.cols(), hidden = t.hidden;
    const MlpView v(w, hidden, d);
    VectorXd g = VectorXd::Zero(w.size());
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gW1(g.data(), hidden, d);
    Eigen::Map<VectorXd> gb1(g.data() + hidden * d, hidden);
    Eigen::Map<VectorXd> gw2(g.data() + hidden * d + hidden, hidden);
    double& gb2 = g(hidden * d + 2 * hidden);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const VectorXd x = X.row(i).transpose();
      const VectorXd h = (v.W1 * x + v.b1).array().tanh();
      const double z = v.w2.dot(h) + v.b2;
      const double s = t.labels[n](i) > 0.5 ? 1.0 : -1.0;
      const double dz = -s * sigmoid(-s * z);
      gw2 += dz * h;
      gb2 += dz;
      const VectorXd da = (dz * v.w2).cwiseProduct((1.0 - h.array().square()).matrix());
      gW1 += da * x.transpose();
      gb1 += da;
    }
    g /= static_cast<double>(X.rows());
    g += t.l2 * w;
    return g;
  }
};

struct AccuracyVisitor {
  std::size_t n;
  const VectorXd& w;

  double operator()(const QuadraticTask&) const { return std::numeric_limits<double>::quiet_NaN(); }
  double operator()(const LogisticTask& t) const {
    const VectorXd z = t.features[n] * w;
    int correct = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) correct += ((z(i) > 0) == (t.labels[n](i) > 0.5));
    return static_cast<double>(correct) / static_cast<double>(z.size());
  }
  double operator()(const MlpTask& t) const {
    const MatrixXd& X = t.features[n];
    const MlpView v(w, t.hidden, X.cols());
    int correct = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const VectorXd h = (v.W1 * X.row(i).transpose() + v.b1).array().tanh();
      correct += ((v.w2.dot(h) + v.b2 > 0) == (t.labels[n](i) > 0.5));
    }
    return static_cast<double>(correct) / static_cast<double>(X.rows());
  }
};

}  // namespace

Task::Task(Variant variant, std::vector<double> data_sizes) : variant_(std::move(variant)) {
  require(!data_sizes.empty(), "InvalidTask", "no clients");
  double total = 0.0;
  for (double d : data_sizes) {
    require(d > 0.0, "InvalidTask", "every client needs data (p_n > 0)");
    total += d;
  }
  for (double d : data_sizes) p_.push_back(d / total);
  sizes_ = std::move(data_sizes);

  const std::size_t n = p_.size();
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, QuadraticTask>) {
          require(t.A.size() == n && t.b.size() == n && t.offset.size() == n, "InvalidTask",
                  "quadratic task size mismatch");
          dim_ = t.b[0].size();
          for (std::size_t i = 0; i < n; ++i) {
            require(t.A[i].rows() == dim_ && t.A[i].cols() == dim_ && t.b[i].size() == dim_,
                    "InvalidTask", "quadratic dims mismatch");
          }
        } else {
          require(t.features.size() == n && t.labels.size() == n, "InvalidTask",
                  "classifier task size mismatch");
          const Eigen::Index d = t.features[0].cols();
          for (std::size_t i = 0; i < n; ++i)
            require(t.features[i].rows() > 0 && t.features[i].rows() == t.labels[i].size() &&
                        t.features[i].cols() == d,
                    "InvalidTask", "classifier data shape mismatch");
          if constexpr (std::is_same_v<T, LogisticTask>)
            dim_ = d;
          else
            dim_ = t.hidden * d + 2 * t.hidden + 1;
        }
      },
      variant_);
}

const char* Task::kind() const {
  switch (variant_.index()) {
    case 0: return "quadratic";
    case 1: return "logistic";
    default: return "mlp";
  }
}

double Task::loss(std::size_t n, const VectorXd& w) const { return std::visit(LossVisitor{n, w}, variant_); }
VectorXd Task::gradient(std::size_t n, const VectorXd& w) const {
  return std::visit(GradientVisitor{n, w}, variant_);
}
double Task::accuracy(std::size_t n, const VectorXd& w) const {
  return std::visit(AccuracyVisitor{n, w}, variant_);
}

double global_loss(const Task& task, const VectorXd& w) {
  double total = 0.0;
  for (std::size_t n = 0; n < task.num_clients(); ++n) total += task.weights()[n] * task.loss(n, w);
  return total;
}

double global_accuracy(const Task& task, const VectorXd& w) {
  double total = 0.0;
  for (std::size_t n = 0; n < task.num_clients(); ++n) total += task.weights()[n] * task.accuracy(n, w);
  return total;
}

VectorXd local_train(const Task& task, std::size_t n, const VectorXd& start, int epochs,
                     double learning_rate) {
  require(epochs >= 1, "DomainError", "epochs must be >= 1");
  require(learning_rate > 0.0, "DomainError", "learning rate must be positive");
  require(start.size() == task.dim(), "DomainError", "model dimension mismatch");
  VectorXd w = start;
  for (int i = 0; i < epochs; ++i) {
    w -= learning_rate * task.gradient(n, w);
    if (!w.allFinite()) throw Error("NonFiniteGradient", "local training diverged");
  }
  return w;
}

VectorXd quadratic_optimum(const Task& task) {
  const QuadraticTask* q = task.quadratic();
  require(q != nullptr, "UnsupportedTask", "closed-form optimum needs a quadratic task");
  const auto& p = task.weights();
  MatrixXd A = MatrixXd::Zero(task.dim(), task.dim());
  VectorXd b = VectorXd::Zero(task.dim());
  for (std::size_t n = 0; n < p.size(); ++n) {
    A += p[n] * q->A[n];
    b += p[n] * q->b[n];
  }
  return A.ldlt().solve(b);
}

double max_affine_norm_on_ball(const MatrixXd& D, const VectorXd& c, double radius) {
  // maximize z'Hz + 2g'z + |d|^2 over |z| <= R in the eigenbasis of D
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(D);
  const VectorXd lambda = eig.eigenvalues();
  const VectorXd d = eig.eigenvectors().transpose() * c;
  const VectorXd h = lambda.array().square();
  const VectorXd g = lambda.cwiseProduct(d);
  const double hmax = h.maxCoeff();
  const double r2 = radius * radius;
  const double scale = std::max(1.0, hmax);
  const double tie = 1e-12 * scale;

  auto value = [&](const VectorXd& z) { return (lambda.cwiseProduct(z) + d).squaredNorm(); };
  auto z_of = [&](double nu) {
    VectorXd z(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) z(i) = g(i) / (nu - h(i));
    return z;
  };

  if (hmax <= 0.0) return d.norm();  // D == 0

  // hard case: g has no weight on the top eigenspace
  bool top_weight = false;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    if (h(i) >= hmax - tie && std::abs(g(i)) > 1e-14 * scale) top_weight = true;
  if (!top_weight) {
    VectorXd z = VectorXd::Zero(h.size());
    Eigen::Index top = 0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      if (h(i) >= hmax - tie)
        top = i;
      else
        z(i) = g(i) / (hmax - h(i));
    }
    if (z.squaredNorm() <= r2) {
      double best = 0.0;
      for (double sign : {1.0, -1.0}) {
        VectorXd zz = z;
        zz(top) = sign * std::sqrt(r2 - z.squaredNorm());
        best = std::max(best, value(zz));
      }
      return std::sqrt(best);
    }
  }

  // secular equation |z(nu)| = R, decreasing in nu > hmax
  double lo = hmax, hi = hmax + g.norm() / radius + scale;
  while (z_of(hi).squaredNorm() > r2) hi = hmax + 2.0 * (hi - hmax);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (z_of(mid).squaredNorm() > r2)
      lo = mid;
    else
      hi = mid;
  }
  return std::sqrt(value(z_of(hi)));
}

TaskConstants task_constants(const Task& task) {
  const QuadraticTask* q = task.quadratic();
  require(q != nullptr, "UnsupportedTask", "bound constants need a quadratic task");
  const auto& p = task.weights();
  TaskConstants c;
  c.L = 0.0;
  c.mu = std::numeric_limits<double>::infinity();
  MatrixXd Abar = MatrixXd::Zero(task.dim(), task.dim());
  for (std::size_t n = 0; n < p.size(); ++n) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(q->A[n], Eigen::EigenvaluesOnly);
    c.L = std::max(c.L, eig.eigenvalues().maxCoeff());
    c.mu = std::min(c.mu, eig.eigenvalues().minCoeff());
    Abar += p[n] * q->A[n];
  }
  require(c.mu > 0.0, "InvalidTask", "quadratic task is not strongly convex");
  c.optimum = quadratic_optimum(task);
  c.domain_radius = 10.0 * c.optimum.norm() + 1.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    // grad F_n - grad F at w* + u equals (A_n - Abar) u + grad F_n(w*)
    const MatrixXd D = q->A[n] - Abar;
    const VectorXd g0 = task.gradient(n, c.optimum);
    c.sigma.push_back(max_affine_norm_on_ball(0.5 * (D + D.transpose()), g0, c.domain_radius));
    c.sigma_bar_sq += p[n] * c.sigma.back() * c.sigma.back();
  }
  return c;
}

// -- generators ----------------------------------------------------------------

namespace {

VectorXd normal_vector(Rng& rng, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

std::vector<double> draw_sizes(Rng& rng, std::size_t clients, int lo, int hi) {
  require(lo >= 1 && hi >= lo, "InvalidTask", "invalid sample-count range");
  std::vector<double> sizes;
  for (std::size_t n = 0; n < clients; ++n)
    sizes.push_back(static_cast<double>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)))));
  return sizes;
}

struct ClassifierData {
  std::vector<MatrixXd> X;
  std::vector<VectorXd> y;
  std::vector<double> sizes;
};

ClassifierData draw_classifier_data(const ClassifierSpec& spec, Rng& rng) {
  ClassifierData data;
  data.sizes = draw_sizes(rng, spec.clients, spec.min_samples, spec.max_samples);
  const Eigen::Index f = spec.features;
  const VectorXd w_true = normal_vector(rng, f);
  for (std::size_t n = 0; n < spec.clients; ++n) {
    const VectorXd center = spec.heterogeneity * normal_vector(rng, f);
    const VectorXd w_local = w_true + 0.5 * spec.heterogeneity * normal_vector(rng, f);
    const auto rows = static_cast<Eigen::Index>(data.sizes[n]);
    MatrixXd X(rows, f + 1);
    VectorXd y(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const VectorXd x = center + normal_vector(rng, f);
      X.row(i).head(f) = x.transpose();
      X(i, f) = 1.0;
      y(i) = (w_local.dot(x) + 0.5 * rng.normal() > 0.0) ? 1.0 : 0.0;
    }
    data.X.push_back(std::move(X));
    data.y.push_back(std::move(y));
  }
  return data;
}

}  // namespace

Task generate_quadratic(const QuadraticSpec& spec, std::uint64_t seed) {
  require(spec.eig_lo > 0.0 && spec.eig_hi >= spec.eig_lo, "InvalidTask", "invalid eigenvalue range");
  Rng rng(seed);
  QuadraticTask t;
  const auto sizes = draw_sizes(rng, spec.clients, spec.min_samples, spec.max_samples);
  const VectorXd center = normal_vector(rng, spec.dim);
  for (std::size_t n = 0; n < spec.clients; ++n) {
    MatrixXd G(spec.dim, spec.dim);
    for (Eigen::Index j = 0; j < spec.dim; ++j) G.col(j) = normal_vector(rng, spec.dim);
    const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(G).householderQ();
    VectorXd eig(spec.dim);
    for (Eigen::Index j = 0; j < spec.dim; ++j) eig(j) = rng.uniform(spec.eig_lo, spec.eig_hi);
    eig(0) = spec.eig_lo;
    eig(spec.dim - 1) = spec.eig_hi;
    MatrixXd A = Q * eig.asDiagonal() * Q.transpose();
    A = 0.5 * (A + A.transpose());
    const VectorXd local_opt = center + spec.heterogeneity * normal_vector(rng, spec.dim);
    VectorXd b = A * local_opt;
    t.offset.push_back(0.5 * local_opt.dot(A * local_opt));
    t.A.push_back(std::move(A));
    t.b.push_back(std::move(b));
  }
  return Task(std::move(t), sizes);
}

Task generate_logistic(const ClassifierSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto data = draw_classifier_data(spec, rng);
  return Task(LogisticTask{std::move(data.X), std::move(data.y), spec.l2}, data.sizes);
}

Task generate_mlp(const ClassifierSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto data = draw_classifier_data(spec, rng);
  return Task(MlpTask{std::move(data.X), std::move(data.y), spec.hidden, spec.l2}, data.sizes);
}

VectorXd initial_model(const Task& task, std::uint64_t seed) {
  if (!std::holds_alternative<MlpTask>(task.variant())) return VectorXd::Zero(task.dim());
  Rng rng(seed);
  VectorXd w(task.dim());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.1 * rng.normal();
  return w;
}

}  // namespace radfl::learning
