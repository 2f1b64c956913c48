#include "llmprice/scenarios.hpp"

#include "llmprice/errors.hpp"
#include "llmprice/random.hpp"

namespace llmprice {

namespace {

struct Archetype {
  Range price, bias, capacity;
};

// close competitor, budget, premium, fringe
constexpr Archetype kArchetypes[] = {
    {{3.0, 7.0}, {2.0, 5.0}, {4.0, 15.0}},
    {{0.5, 2.5}, {0.0, 1.5}, {2.0, 10.0}},
    {{7.0, 12.0}, {4.0, 8.0}, {2.0, 8.0}},
    {{10.0, 18.0}, {0.0, 1.0}, {1.0, 4.0}},
};

}  // namespace

Market suite_market(std::uint64_t seed, const SuiteOptions& o) {
  if (o.n_users < 1 || o.m_providers < 2 || !(o.price_cap > 0.0)) {
    throw ConfigError("suite_market: need n_users >= 1, m_providers >= 2, price_cap > 0");
  }
  Rng rng(mix_seed(seed, 0x5117e));
  std::vector<Provider> providers;
  for (int j = 0; j + 1 < o.m_providers; ++j) {
    const Archetype& a = kArchetypes[rng.below(4)];
    providers.push_back(Provider{"rival_" + std::to_string(j),
                                 std::min(rng.uniform(a.price.low, a.price.high), o.price_cap),
                                 rng.uniform(a.capacity.low, a.capacity.high),
                                 rng.uniform(a.bias.low, a.bias.high), false});
  }
  providers.push_back(Provider{"target", rng.uniform(2.0, 8.0), rng.uniform(4.0, 15.0),
                               rng.uniform(2.0, 5.0), true});
  std::vector<UserGroup> users(o.n_users);
  for (int i = 0; i < o.n_users; ++i) {
    users[i].id = "user_" + std::to_string(i);
    users[i].demand = rng.uniform(10.0, 50.0);
    for (int j = 0; j < o.m_providers; ++j) users[i].delays.push_back(rng.uniform(0.1, 3.0));
  }
  return Market(std::move(providers), std::move(users), PreferenceParams{1.0, 1.0, 1.0, {}},
                o.price_cap);
}

std::vector<Market> scenario_set(std::uint64_t seed, int count, const SuiteOptions& o) {
  if (count < 1) throw ConfigError("scenario_set: count must be >= 1");
  std::vector<Market> out;
  out.reserve(count);
  for (int c = 0; c < count; ++c) out.push_back(suite_market(seed * 1000003ULL + c, o));
  return out;
}

}  // namespace llmprice
