#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace stcp {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Index;

// Error taxonomy used across the library.
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct invalid_parameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct numerical_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ingestion_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All length-MN vectors use spatial-fastest order: entry for (location i,
// time t) sits at (t-1)*N + i, t = 1..M. Reshaped as an N x M column-major
// matrix, column t-1 is the spatial field at time t.
inline Index flat_index(Index i, int t, Index n_loc) {
  return static_cast<Index>(t - 1) * n_loc + i;
}

inline Eigen::Map<const MatrixXd> as_space_time(const VectorXd& v, Index n_loc) {
  return {v.data(), n_loc, v.size() / n_loc};
}
inline Eigen::Map<MatrixXd> as_space_time(VectorXd& v, Index n_loc) {
  return {v.data(), n_loc, v.size() / n_loc};
}

}  // namespace stcp
