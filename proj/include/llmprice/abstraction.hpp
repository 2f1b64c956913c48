#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "llmprice/pricing.hpp"
#include "llmprice/random.hpp"
#include "llmprice/scorer.hpp"

namespace llmprice {

struct AbstractedMarket {
  Market market;                    // kept rivals, then the aggregate, then the target
  std::vector<int> kept_indices;    // original rival indices, ascending
  std::vector<int> aggregated;      // rivals folded into the aggregate
  RivalScores scores;
  bool identity = false;            // K equals the rival count: nothing aggregated
};

// Keeps the K-1 rivals with the highest avg score (ties to the lower index)
// and folds the rest into one rival: capacity sum_j s_sum_j alpha_j, price,
// bias and delays averaged with weights s_avg_j. K = number of rivals returns
// the original market.
AbstractedMarket aggregate(const Market& market, const RivalScores& scores, int k);

enum class Heuristic { kMin, kAvg };

// MIN: avg scores 1 / (1 + price rank), cheapest first; sum scores 1.
// AVG: all scores 1.
RivalScores heuristic_scores(const Market& market, Heuristic kind, int k);

// AVG abstraction: K identical copies of the mean rival sharing the summed
// capacity. Same target profit as a single aggregate of all rivals.
Market avg_abstraction(const Market& market, int k);

// (1/L) sum_k ((Y_k - Yhat_k) / max|Y|)^2; 0 when Y is identically zero.
double curve_loss(const Market& original, const Market& abstracted, std::span<const double> prices,
                  const SolveOptions& solve = {});
double curve_loss(const ScorerModel& scorer, const Market& market, int k,
                  std::span<const double> prices, const SolveOptions& solve = {});

// Target profits of the original market at the given prices (cached per
// scenario during training).
std::vector<double> profit_values(const Market& market, std::span<const double> prices,
                                  const SolveOptions& solve = {});

struct CurveLossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d scorer parameters
  int samples = 0;
  int degenerate = 0;    // price samples whose equilibrium was at a kink
};

// Loss and analytic gradient, with Y given. The top-(K-1) selection is held
// fixed (straight-through).
CurveLossGrad curve_loss_gradient(const ScorerModel& scorer, const Market& market, int k,
                                  std::span<const double> prices, std::span<const double> y,
                                  const SolveOptions& solve = {});

struct TrainOptions {
  int epochs = 200;
  int batch = 16;
  double learning_rate = 1e-2;
  int patience = 20;
  double validation_fraction = 0.2;
  int price_samples = 16;
  double spsa_threshold = 0.1;  // degenerate share of a batch that triggers SPSA
  double spsa_perturbation = 1e-2;
  int width = 32;
  std::uint64_t seed = 0;
  std::optional<ScorerModel> initial;  // resume from this model instead of a fresh one
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch, fixed price grid
  double initial_val_loss = 0.0;
  double avg_baseline_val_loss = 0.0;  // AVG heuristic on the same validation grid
  double best_val_loss = 0.0;
  int best_epoch = -1;             // -1 = the initial model
  int epochs_run = 0;
  int spsa_batches = 0;
  bool early_stopped = false;
  bool identity = false;           // every scenario had K = rival count
  double wall_time = 0.0;
};

struct TrainResult {
  ScorerModel model;
  TrainReport report;
};

TrainResult train_scorer(std::span<const Market> scenarios, int k, const TrainOptions& options = {});

// Uniform price samples over [0, cap]; jittered within each cell when rng given.
std::vector<double> price_samples(double cap, int count, Rng* rng = nullptr);

// Prices the abstracted market (exact when within the enumeration bound,
// sweep otherwise) and reports the chosen price's true profit in `original`.
// With `with_oracle`, oracle_ratio is filled from optimize_price_oracle.
PricingResult price_on_abstraction(const Market& original, const Market& abstracted,
                                   bool with_oracle, const SweepOptions& sweep = {});

PricingResult abstracted_pricing(const Market& market, const ScorerModel& scorer, int k,
                                 bool with_oracle, const SweepOptions& sweep = {});

}  // namespace llmprice
