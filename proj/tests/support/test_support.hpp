#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "llmprice/market.hpp"
#include "llmprice/random.hpp"

namespace llmprice::testing {

struct SmallMarket {
  std::vector<double> prices;
  std::vector<double> capacities;
  std::vector<double> biases;  // empty = zeros
  std::vector<double> demands;
  std::vector<std::vector<double>> delays;  // empty = zeros
  double w_q = 1.0;
  double w_d = 1.0;
  double price_cap = 100.0;
  int target = -1;  // -1 = last provider
};

inline Market make_market(const SmallMarket& s) {
  const int m = static_cast<int>(s.prices.size());
  const int target = s.target < 0 ? m - 1 : s.target;
  std::vector<Provider> providers(m);
  for (int j = 0; j < m; ++j) {
    providers[j].id = "p" + std::to_string(j);
    providers[j].price = s.prices[j];
    providers[j].capacity = s.capacities[j];
    providers[j].perceived_value = s.biases.empty() ? 0.0 : s.biases[j];
    providers[j].is_target = (j == target);
  }
  std::vector<UserGroup> users(s.demands.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    users[i].id = "u" + std::to_string(i);
    users[i].demand = s.demands[i];
    users[i].delays = s.delays.empty() ? std::vector<double>(m, 0.0) : s.delays[i];
  }
  return Market(std::move(providers), std::move(users), PreferenceParams{1.0, s.w_q, s.w_d, {}},
                s.price_cap);
}

// Uniform-ish random point on each user's demand simplex.
inline FlowMatrix random_feasible_flow(const Market& market, Rng& rng) {
  FlowMatrix f(market.n_users(), market.n_providers());
  for (int i = 0; i < market.n_users(); ++i) {
    double total = 0.0;
    for (int j = 0; j < market.n_providers(); ++j) {
      f(i, j) = -std::log(1.0 - rng.uniform());
      total += f(i, j);
    }
    f.row(i) *= market.demands()[i] / total;
  }
  return f;
}

// Independent oracle: grid search of C_1 over f_1 in [0, D] for n=1, m=2.
inline std::pair<double, double> grid_minimiser(const Market& market, double step) {
  const double d = market.demands()[0];
  double best_f = 0.0, best_c = std::numeric_limits<double>::infinity();
  const long steps = std::lround(d / step);
  for (long k = 0; k <= steps; ++k) {
    const double f[2] = {std::min(d, k * step), d - std::min(d, k * step)};
    double c = 0.0;
    for (int j = 0; j < 2; ++j) {
      c += f[j] * (market.prices()[j] + market.params().w_q * f[j] / market.capacities()[j] +
                   market.params().w_d * market.delays()(0, j) - market.biases()[j]);
    }
    if (c < best_c) {
      best_c = c;
      best_f = f[0];
    }
  }
  return {best_f, d - best_f};
}

// Same market with the rivals reordered: new rival q is old rival perm[q].
inline Market permuted(const Market& m, const std::vector<int>& perm) {
  std::vector<Provider> providers;
  std::vector<UserGroup> users = m.users();
  for (int j : perm) providers.push_back(m.providers()[j]);
  providers.push_back(m.target());
  for (auto& u : users) {
    std::vector<double> d;
    for (int j : perm) d.push_back(u.delays[j]);
    d.push_back(u.delays.back());
    u.delays = d;
  }
  PreferenceParams p = m.params();
  p.biases.clear();
  return Market(providers, users, p, m.price_cap());
}

}  // namespace llmprice::testing
