#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace llmprice {

// Flow allocation f_ij, users by rows and providers by columns, in millions
// of tokens per day. Feasible flows are nonnegative with row sums equal to
// the users' demands.
using FlowMatrix = Eigen::MatrixXd;

struct Provider {
  std::string id;
  double price = 0.0;            // dollars per million tokens
  double capacity = 1.0;         // millions of tokens per unit of congestion
  double perceived_value = 0.0;  // subjective per-token value b_j
  bool is_target = false;
};

struct UserGroup {
  std::string id;
  double demand = 0.0;         // millions of tokens per day
  std::vector<double> delays;  // seconds, one per provider
};

// Preference weights. w_p is pinned to 1; biases mirror the providers'
// perceived values when attached to a market.
struct PreferenceParams {
  double w_p = 1.0;
  double w_q = 1.0;
  double w_d = 1.0;
  std::vector<double> biases;
};

// Immutable game instance. The target provider always sits in the last
// column; construction moves it there and keeps the rivals' relative order.
class Market {
 public:
  Market(std::vector<Provider> providers, std::vector<UserGroup> users,
         PreferenceParams params, double price_cap);

  const std::vector<Provider>& providers() const { return providers_; }
  const std::vector<UserGroup>& users() const { return users_; }
  const PreferenceParams& params() const { return params_; }
  double price_cap() const { return price_cap_; }

  int n_users() const { return static_cast<int>(users_.size()); }
  int n_providers() const { return static_cast<int>(providers_.size()); }
  int n_rivals() const { return n_providers() - 1; }
  int target_index() const { return n_providers() - 1; }
  const Provider& target() const { return providers_.back(); }

  const Eigen::VectorXd& prices() const { return prices_; }
  const Eigen::VectorXd& capacities() const { return capacities_; }
  const Eigen::VectorXd& biases() const { return biases_; }
  const Eigen::VectorXd& demands() const { return demands_; }
  const Eigen::MatrixXd& delays() const { return delays_; }  // n x m

  // Route cost without congestion: w_p p_j + w_d d_ij - b_j.
  Eigen::MatrixXd fixed_costs() const;

  Market with_target_price(double price) const;
  Market with_prices(const Eigen::VectorXd& prices) const;
  // Replaces w_q, w_d and, when theta.biases is nonempty, every b_j.
  Market with_params(const PreferenceParams& theta) const;
  Market with_demands(const Eigen::VectorXd& demands) const;

 private:
  void validate_and_cache();

  std::vector<Provider> providers_;
  std::vector<UserGroup> users_;
  PreferenceParams params_;
  double price_cap_;

  Eigen::VectorXd prices_, capacities_, biases_, demands_;
  Eigen::MatrixXd delays_;
};

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  // Strict YYYY-MM-DD.
  static Date parse(const std::string& text);
  std::string str() const;
  auto operator<=>(const Date&) const = default;
};

struct DateRange {
  Date first;
  Date last;  // inclusive
  bool contains(const Date& d) const { return first <= d && d <= last; }
};

// One day of observed routing: flows, demands and the objective factors in
// force that day.
struct ObservedDay {
  Date date;
  FlowMatrix flows;          // n x m
  Eigen::VectorXd demands;   // n
  Eigen::VectorXd prices;    // m
  Eigen::VectorXd capacities;  // m
  Eigen::MatrixXd delays;    // n x m
};

// Validates shapes and signs. Row sums within 1e-6 relative of the demand
// are rescaled to match exactly; larger mismatches throw ValidationError.
ObservedDay make_observed_day(Date date, FlowMatrix flows, Eigen::VectorXd demands,
                              Eigen::VectorXd prices, Eigen::VectorXd capacities,
                              Eigen::MatrixXd delays);

// Market carrying the day's objective factors and demands under `theta`.
// Identifiers and price cap are copied from `base` when given.
Market market_for_day(const ObservedDay& day, const PreferenceParams& theta,
                      const Market* base = nullptr);

// Observed day of a market whose flows are `flows` (e.g. an equilibrium).
ObservedDay observe(const Market& market, const FlowMatrix& flows, Date date);

struct Range {
  double low = 0.0;
  double high = 1.0;
};

struct SynthRanges {
  Range price{1.0, 10.0};
  Range capacity{2.0, 20.0};
  Range delay{0.1, 3.0};
  Range demand{10.0, 50.0};
  Range bias{0.0, 5.0};
  double w_q = 1.0;
  double w_d = 1.0;
  double price_cap = 20.0;
};

// Deterministic in (seed, sizes, ranges). The last provider is the target.
Market synth_market(std::uint64_t seed, int n_users, int m_providers,
                    const SynthRanges& ranges = {});

}  // namespace llmprice
