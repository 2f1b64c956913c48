#pragma once

#include <Eigen/Dense>

#include <vector>

namespace llmprice {

// minimize c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x_j >= 0 unless free[j].
struct LinearProgram {
  Eigen::VectorXd cost;
  Eigen::MatrixXd a_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd a_ub;
  Eigen::VectorXd b_ub;
  std::vector<bool> free;  // empty = all nonnegative
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpSolution {
  LpStatus status = LpStatus::kInfeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
  int pivots = 0;
};

// Dense two-phase tableau simplex with Bland's rule. Intended for problems
// with up to a few hundred rows and columns.
LpSolution solve_lp(const LinearProgram& lp, double tolerance = 1e-9);

}  // namespace llmprice
