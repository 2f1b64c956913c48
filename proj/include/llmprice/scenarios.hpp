#pragma once

#include <cstdint>
#include <vector>

#include "llmprice/market.hpp"

namespace llmprice {

// Synthetic rival markets for training and evaluating the abstraction. Each
// rival is drawn from one of four archetypes (close competitor, budget,
// premium, fringe) so that rivals differ in how much they matter to the
// target.
struct SuiteOptions {
  int n_users = 3;
  int m_providers = 8;  // rivals + target
  double price_cap = 20.0;
};

Market suite_market(std::uint64_t seed, const SuiteOptions& options = {});

// Markets seeded seed*1000003 + 0 .. count-1; disjoint seeds give disjoint suites.
std::vector<Market> scenario_set(std::uint64_t seed, int count, const SuiteOptions& options = {});

}  // namespace llmprice
