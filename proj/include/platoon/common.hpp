#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace platoon {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;

inline constexpr double kGravity = 9.8;

enum class ErrorKind {
  invalid_config,
  dimension_mismatch,
  infeasible_input,
  no_margin,
  psd_repair_failed,
  infeasible_subproblem,
  max_iterations,
  restricted_problem_infeasible,
  solver_failure,
  constraint_violation,
  io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace platoon
