#pragma once

#include <optional>

#include "llmprice/market.hpp"

namespace llmprice {

struct EquilibriumResult {
  FlowMatrix flow;                   // F*
  Eigen::VectorXd user_multipliers;  // common marginal cost on used routes
  double potential = 0.0;
  double wardrop_gap = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;                // best-response rounds
  Eigen::VectorXd congestion;        // Q_j = load_j / alpha_j
};

struct SolveOptions {
  double tolerance = 1e-8;  // on wardrop_gap and kkt_residual
  int max_rounds = 10000;
  std::optional<FlowMatrix> initial;  // must be feasible when given
};

// Routes with f_ij <= kUsedRouteFraction * D_i count as unused.
inline constexpr double kUsedRouteFraction = 1e-9;

// C_i = sum_j f_ij (w_p p_j + w_q Q_j + w_d d_ij - b_j).
double user_cost(int user, const FlowMatrix& flow, const Market& market);

double potential(const FlowMatrix& flow, const Market& market);

// dPhi/df_ij = w_p p_j + w_d d_ij - b_j + (w_q / alpha_j)(load_j + f_ij).
double marginal_cost(int user, int provider, const FlowMatrix& flow, const Market& market);
Eigen::MatrixXd marginal_costs(const FlowMatrix& flow, const Market& market);

// Exact minimiser of C_i over user i's simplex with everyone else fixed.
Eigen::RowVectorXd best_response(int user, const FlowMatrix& flow, const Market& market);

// Max over users of (largest marginal on a used route - smallest marginal).
double wardrop_gap(const FlowMatrix& flow, const Market& market);

// Max violation of stationarity, complementarity and primal feasibility.
double kkt_residual(const FlowMatrix& flow, const Market& market);

// Unique user-side equilibrium by round-robin best response. Throws
// ConvergenceError when the gap is still above tolerance after max_rounds.
EquilibriumResult solve_equilibrium(const Market& market, const SolveOptions& options = {});

// Feasibility of a flow for the market (shape, sign, row sums to rel_tol).
bool is_feasible(const FlowMatrix& flow, const Market& market, double rel_tol = 1e-9);

}  // namespace llmprice
