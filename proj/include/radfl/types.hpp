#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace radfl {

template <typename Scalar>
struct math_types {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
};

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;

using NodeId = int;

/// Base of every error the library throws; `kind()` is a stable tag
/// (e.g. "ConnectivityFailure") that the CLI and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

inline void require(bool cond, const char* kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

}  // namespace radfl
