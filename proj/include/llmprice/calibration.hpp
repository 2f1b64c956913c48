#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "llmprice/equilibrium.hpp"

namespace llmprice {

struct BiasInit {
  Eigen::VectorXd biases;     // one per provider, >= 0
  double objective = 0.0;     // sum of biases
  double total_slack = 0.0;   // 0 when the observations are an exact equilibrium
  bool relaxed = false;       // the slack program had to be used
};

// Smallest nonnegative biases making the observed flows satisfy the
// equilibrium conditions with w_p = w_q = w_d = 1. Constraints are pooled
// over days with one multiplier per (user, day).
BiasInit init_biases(std::span<const ObservedDay> days);

enum class Direction {
  kGradient,     // projected steepest descent
  kGaussNewton,  // projected Levenberg-Marquardt step from the flow Jacobians
};

struct FitOptions {
  int max_iters = 500;
  double initial_step = 1e-2;  // gradient direction only; Gauss-Newton tries 1 first
  double armijo = 1e-4;
  int max_halvings = 40;
  double rel_tol = 1e-8;  // on the relative loss decrease over `window` iterations
  int window = 5;
  double w_q_floor = 1e-6;
  // Plain projected gradient stalls around 1e-2 loss on well-posed synthetic
  // problems within the iteration budget, hence the default.
  Direction direction = Direction::kGaussNewton;
  SolveOptions solve{1e-11, 20000, std::nullopt};
};

struct CalibrationReport {
  PreferenceParams theta;
  std::vector<double> loss_trace;  // loss at the start and after each accepted step
  double r2 = 0.0;
  double mae = 0.0;
  bool converged = false;
  int iterations = 0;
  double wall_time = 0.0;  // seconds
};

// sum_t || F*(theta; day t) - F_t ||^2
double calibration_loss(const PreferenceParams& theta, std::span<const ObservedDay> days,
                        const SolveOptions& solve = {});

CalibrationReport fit_theta(std::span<const ObservedDay> days, const PreferenceParams& init,
                            const FitOptions& options = {});

FlowMatrix predict_flows(const PreferenceParams& theta, const ObservedDay& day,
                         const SolveOptions& solve = {});

struct FlowFit {
  double r2 = 0.0;
  double mae = 0.0;
  double loss = 0.0;
};

// R^2 against the mean of all (user, provider, day) entries, and MAE.
FlowFit flow_fit(const PreferenceParams& theta, std::span<const ObservedDay> days,
                 const SolveOptions& solve = {});

// Equilibrium days of `market` with prices jittered multiplicatively by up to
// +-price_jitter (target included) and demands by up to +-demand_jitter.
std::vector<ObservedDay> simulate_days(const Market& market, int count, std::uint64_t seed,
                                       double price_jitter = 0.3, double demand_jitter = 0.2,
                                       const SolveOptions& solve = {1e-12, 50000, std::nullopt});

}  // namespace llmprice
