#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmprice/equilibrium.hpp"

namespace llmprice {

struct ProfitPoint {
  double profit = 0.0;
  double load = 0.0;  // target equilibrium load, sum_i f*_is
};

struct CurveSample {
  double price = 0.0;
  double profit = 0.0;
  double load = 0.0;
};

struct PricingResult {
  double best_price = 0.0;
  double best_profit = 0.0;
  std::vector<CurveSample> curve;  // sorted by price
  std::string method;              // sweep_refine | exact_piecewise | dense_grid | abstracted
  std::optional<double> oracle_ratio;
  double solve_time = 0.0;  // seconds
};

// Target profit p * load at the given target price.
ProfitPoint profit(double price, const Market& market, const SolveOptions& solve = {});

std::vector<CurveSample> profit_curve(const Market& market, std::span<const double> grid,
                                      const SolveOptions& solve = {});

struct SweepOptions {
  int coarse_points = 64;
  double refine_tol = 0.0;  // <= 0 means price_cap * 1e-4
  int refine_peaks = 3;     // local maxima of the coarse curve that get refined
  SolveOptions solve;
};

PricingResult optimize_price_sweep(const Market& market, const SweepOptions& options = {});

// Enumeration bound on n * m for the exact oracle.
inline constexpr int kExactMaxCells = 12;

// Support-pattern enumeration; throws ScaleError when n * m > kExactMaxCells.
PricingResult optimize_price_exact(const Market& market);

// Uniform grid with spacing step_fraction * price_cap.
PricingResult optimize_price_dense(const Market& market, double step_fraction = 1e-3,
                                   const SolveOptions& solve = {});

// Exact oracle when within the bound, dense grid otherwise.
PricingResult optimize_price_oracle(const Market& market);

}  // namespace llmprice
