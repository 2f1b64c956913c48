#include "llmprice/simplex.hpp"

#include <cmath>
#include <limits>

#include "llmprice/errors.hpp"

namespace llmprice {

namespace {

class Tableau {
 public:
  Tableau(Eigen::MatrixXd a, Eigen::VectorXd b, int n_structural, double tol)
      : rows_(static_cast<int>(a.rows())), structural_(n_structural), tol_(tol) {
    const int cols = n_structural + rows_;  // structural + one artificial per row
    t_ = Eigen::MatrixXd::Zero(rows_ + 1, cols + 1);
    for (int i = 0; i < rows_; ++i) {
      const double sign = b[i] < 0.0 ? -1.0 : 1.0;
      t_.row(i).head(n_structural) = sign * a.row(i);
      t_(i, n_structural + i) = 1.0;
      t_(i, cols) = sign * b[i];
      basis_.push_back(n_structural + i);
    }
    rhs_ = cols;
  }

  // Phase 1: minimise the sum of artificials. Returns the optimal value.
  double phase_one(int& pivots) {
    t_.row(rows_).setZero();
    for (int i = 0; i < rows_; ++i) {
      t_.row(rows_).head(structural_) -= t_.row(i).head(structural_);
      t_(rows_, rhs_) -= t_(i, rhs_);
    }
    run(rhs_, pivots);  // artificials may enter in phase 1
    return -t_(rows_, rhs_);
  }

  // Pivots remaining artificials out of the basis; drops redundant rows.
  void expel_artificials(int& pivots) {
    for (int i = 0; i < rows_; ++i) {
      if (basis_[i] < structural_) continue;
      int col = -1;
      for (int j = 0; j < structural_; ++j) {
        if (std::abs(t_(i, j)) > tol_) {
          col = j;
          break;
        }
      }
      if (col >= 0) {
        pivot(i, col);
        ++pivots;
      } else {
        redundant_.push_back(i);
      }
    }
  }

  // Phase 2 over structural columns. Returns false when unbounded.
  bool phase_two(const Eigen::VectorXd& cost, int& pivots) {
    t_.row(rows_).setZero();
    t_.row(rows_).head(structural_) = cost.transpose();
    for (int i = 0; i < rows_; ++i) {
      if (is_redundant(i)) continue;
      const int bvar = basis_[i];
      const double cb = bvar < structural_ ? cost[bvar] : 0.0;
      if (cb != 0.0) t_.row(rows_) -= cb * t_.row(i);
    }
    return run(structural_, pivots);
  }

  Eigen::VectorXd solution() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(structural_);
    for (int i = 0; i < rows_; ++i) {
      if (!is_redundant(i) && basis_[i] < structural_) x[basis_[i]] = t_(i, rhs_);
    }
    return x;
  }

 private:
  bool is_redundant(int i) const {
    for (int r : redundant_)
      if (r == i) return true;
    return false;
  }

  // Bland's rule over columns [0, limit). Returns false when unbounded.
  bool run(int limit, int& pivots) {
    while (true) {
      int enter = -1;
      for (int j = 0; j < limit; ++j) {
        if (t_(rows_, j) < -tol_) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < rows_; ++i) {
        if (is_redundant(i) || t_(i, enter) <= tol_) continue;
        const double ratio = t_(i, rhs_) / t_(i, enter);
        if (ratio < best - tol_ || (std::abs(ratio - best) <= tol_ && basis_[i] < basis_[leave])) {
          best = ratio;
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
      if (++pivots > 100000) throw NumericalError("simplex pivot limit exceeded");
    }
  }

  void pivot(int row, int col) {
    t_.row(row) /= t_(row, col);
    for (int i = 0; i <= rows_; ++i) {
      if (i == row) continue;
      const double f = t_(i, col);
      if (f != 0.0) t_.row(i) -= f * t_.row(row);
    }
    basis_[row] = col;
  }

  int rows_;
  int structural_;
  double tol_;
  int rhs_ = 0;
  Eigen::MatrixXd t_;
  std::vector<int> basis_;
  std::vector<int> redundant_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, double tolerance) {
  const int n = static_cast<int>(lp.cost.size());
  const int m_eq = static_cast<int>(lp.a_eq.rows());
  const int m_ub = static_cast<int>(lp.a_ub.rows());
  if ((m_eq > 0 && lp.a_eq.cols() != n) || (m_ub > 0 && lp.a_ub.cols() != n) ||
      lp.b_eq.size() != m_eq || lp.b_ub.size() != m_ub ||
      (!lp.free.empty() && static_cast<int>(lp.free.size()) != n)) {
    throw ShapeError("linear program has inconsistent dimensions");
  }

  // Column map: each original variable gets a positive part and, when free,
  // a negative part; then one slack per inequality row.
  std::vector<int> pos(n), neg(n, -1);
  int cols = 0;
  for (int j = 0; j < n; ++j) {
    pos[j] = cols++;
    if (!lp.free.empty() && lp.free[j]) neg[j] = cols++;
  }
  const int first_slack = cols;
  cols += m_ub;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m_eq + m_ub, cols);
  Eigen::VectorXd b(m_eq + m_ub);
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(cols);
  for (int j = 0; j < n; ++j) {
    cost[pos[j]] = lp.cost[j];
    if (neg[j] >= 0) cost[neg[j]] = -lp.cost[j];
  }
  auto fill = [&](int row, const Eigen::RowVectorXd& coeffs) {
    for (int j = 0; j < n; ++j) {
      a(row, pos[j]) = coeffs[j];
      if (neg[j] >= 0) a(row, neg[j]) = -coeffs[j];
    }
  };
  for (int i = 0; i < m_eq; ++i) {
    fill(i, lp.a_eq.row(i));
    b[i] = lp.b_eq[i];
  }
  for (int i = 0; i < m_ub; ++i) {
    fill(m_eq + i, lp.a_ub.row(i));
    a(m_eq + i, first_slack + i) = 1.0;
    b[m_eq + i] = lp.b_ub[i];
  }

  LpSolution sol;
  Tableau tab(a, b, cols, tolerance);
  const double scale = std::max(1.0, b.cwiseAbs().sum());
  if (tab.phase_one(sol.pivots) > tolerance * scale) {
    sol.status = LpStatus::kInfeasible;
    return sol;
  }
  tab.expel_artificials(sol.pivots);
  if (!tab.phase_two(cost, sol.pivots)) {
    sol.status = LpStatus::kUnbounded;
    return sol;
  }
  const Eigen::VectorXd xs = tab.solution();
  sol.x.resize(n);
  for (int j = 0; j < n; ++j) sol.x[j] = xs[pos[j]] - (neg[j] >= 0 ? xs[neg[j]] : 0.0);
  sol.objective = lp.cost.dot(sol.x);
  sol.status = LpStatus::kOptimal;
  return sol;
}

}  // namespace llmprice
