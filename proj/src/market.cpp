#include "llmprice/market.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "llmprice/errors.hpp"
#include "llmprice/random.hpp"

namespace llmprice {

namespace {

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace

Market::Market(std::vector<Provider> providers, std::vector<UserGroup> users,
               PreferenceParams params, double price_cap)
    : providers_(std::move(providers)),
      users_(std::move(users)),
      params_(std::move(params)),
      price_cap_(price_cap) {
  validate_and_cache();
}

void Market::validate_and_cache() {
  if (providers_.empty()) throw ValidationError("market has no providers");
  const auto n_targets = std::count_if(providers_.begin(), providers_.end(),
                                       [](const Provider& p) { return p.is_target; });
  if (n_targets != 1) {
    throw ValidationError("market must have exactly one target provider, found " +
                          std::to_string(n_targets));
  }
  if (!params_.biases.empty() && params_.biases.size() != providers_.size()) {
    throw ShapeError("params.biases has " + std::to_string(params_.biases.size()) +
                     " entries for " + std::to_string(providers_.size()) + " providers");
  }
  // Move the target to the last column, carrying its bias and every delay.
  auto it = std::find_if(providers_.begin(), providers_.end(),
                         [](const Provider& p) { return p.is_target; });
  const auto from = static_cast<std::size_t>(it - providers_.begin());
  const std::size_t m = providers_.size();
  if (from != m - 1) {
    std::rotate(it, it + 1, providers_.end());
    if (!params_.biases.empty()) {
      std::rotate(params_.biases.begin() + from, params_.biases.begin() + from + 1,
                  params_.biases.end());
    }
    for (auto& u : users_) {
      if (u.delays.size() == m) {
        std::rotate(u.delays.begin() + from, u.delays.begin() + from + 1, u.delays.end());
      }
    }
  }
  if (params_.biases.empty()) {
    for (const auto& p : providers_) params_.biases.push_back(p.perceived_value);
  } else {
    for (std::size_t j = 0; j < m; ++j) providers_[j].perceived_value = params_.biases[j];
  }

  if (params_.w_p != 1.0) throw ValidationError("w_p must equal 1");
  if (!finite_nonneg(params_.w_q)) throw ValidationError("w_q must be finite and >= 0");
  if (!finite_nonneg(params_.w_d)) throw ValidationError("w_d must be finite and >= 0");
  if (!(std::isfinite(price_cap_) && price_cap_ > 0.0)) {
    throw ValidationError("price_cap must be positive");
  }

  prices_.resize(m);
  capacities_.resize(m);
  biases_.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& p = providers_[j];
    if (!finite_nonneg(p.price)) throw ValidationError("provider '" + p.id + "': price must be >= 0");
    if (!(std::isfinite(p.capacity) && p.capacity > 0.0)) {
      throw ValidationError("provider '" + p.id + "': capacity must be > 0");
    }
    if (!finite_nonneg(p.perceived_value)) {
      throw ValidationError("provider '" + p.id + "': perceived_value must be >= 0");
    }
    prices_[j] = p.price;
    capacities_[j] = p.capacity;
    biases_[j] = p.perceived_value;
  }
  if (providers_.back().price > price_cap_) {
    throw ValidationError("target price exceeds price_cap");
  }

  const std::size_t n = users_.size();
  demands_.resize(n);
  delays_.resize(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = users_[i];
    if (!finite_nonneg(u.demand)) throw ValidationError("user '" + u.id + "': demand must be >= 0");
    if (u.delays.size() != m) {
      throw ShapeError("user '" + u.id + "': expected " + std::to_string(m) + " delays, got " +
                       std::to_string(u.delays.size()));
    }
    demands_[i] = u.demand;
    for (std::size_t j = 0; j < m; ++j) {
      if (!finite_nonneg(u.delays[j])) {
        throw ValidationError("user '" + u.id + "': delays must be >= 0");
      }
      delays_(i, j) = u.delays[j];
    }
  }
}

Eigen::MatrixXd Market::fixed_costs() const {
  const auto& w = params_;
  Eigen::MatrixXd c = w.w_d * delays_;
  c.rowwise() += (w.w_p * prices_ - biases_).transpose();
  return c;
}

Market Market::with_target_price(double price) const {
  Market out = *this;
  out.providers_.back().price = price;
  out.validate_and_cache();
  return out;
}

Market Market::with_prices(const Eigen::VectorXd& prices) const {
  if (prices.size() != n_providers()) throw ShapeError("price vector length mismatch");
  Market out = *this;
  for (int j = 0; j < n_providers(); ++j) out.providers_[j].price = prices[j];
  out.validate_and_cache();
  return out;
}

Market Market::with_params(const PreferenceParams& theta) const {
  Market out = *this;
  out.params_.w_p = theta.w_p;
  out.params_.w_q = theta.w_q;
  out.params_.w_d = theta.w_d;
  if (!theta.biases.empty()) {
    if (static_cast<int>(theta.biases.size()) != n_providers()) {
      throw ShapeError("theta.biases length mismatch");
    }
    out.params_.biases = theta.biases;
  }
  out.validate_and_cache();
  return out;
}

Market Market::with_demands(const Eigen::VectorXd& demands) const {
  if (demands.size() != n_users()) throw ShapeError("demand vector length mismatch");
  Market out = *this;
  for (int i = 0; i < n_users(); ++i) out.users_[i].demand = demands[i];
  out.validate_and_cache();
  return out;
}

Date Date::parse(const std::string& text) {
  auto digits = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t k = pos; k < pos + len; ++k) {
      if (text[k] < '0' || text[k] > '9') throw ParseError("malformed date '" + text + "'");
      v = v * 10 + (text[k] - '0');
    }
    return v;
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw ParseError("malformed date '" + text + "', expected YYYY-MM-DD");
  }
  Date d{digits(0, 4), digits(5, 2), digits(8, 2)};
  static constexpr int kDays[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > kDays[d.month - 1]) {
    throw ParseError("invalid calendar date '" + text + "'");
  }
  const bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
  if (d.month == 2 && d.day == 29 && !leap) throw ParseError("invalid calendar date '" + text + "'");
  return d;
}

std::string Date::str() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

ObservedDay make_observed_day(Date date, FlowMatrix flows, Eigen::VectorXd demands,
                              Eigen::VectorXd prices, Eigen::VectorXd capacities,
                              Eigen::MatrixXd delays) {
  const auto n = flows.rows();
  const auto m = flows.cols();
  if (demands.size() != n || prices.size() != m || capacities.size() != m ||
      delays.rows() != n || delays.cols() != m) {
    throw ShapeError("observed day " + date.str() + ": inconsistent shapes");
  }
  if (!flows.allFinite() || (flows.array() < 0.0).any()) {
    throw ValidationError("observed day " + date.str() + ": flows must be finite and >= 0");
  }
  if ((capacities.array() <= 0.0).any()) {
    throw ValidationError("observed day " + date.str() + ": capacities must be > 0");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row = flows.row(i).sum();
    const double d = demands[i];
    if (d < 0.0) throw ValidationError("observed day " + date.str() + ": negative demand");
    if (d == 0.0 && row == 0.0) continue;
    const double rel = std::abs(row - d) / std::max(std::abs(d), std::abs(row));
    if (rel > 1e-6) {
      std::ostringstream msg;
      msg << "observed day " << date.str() << ": user " << i << " flows sum to " << row
          << " but demand is " << d;
      throw ValidationError(msg.str());
    }
    if (row > 0.0) flows.row(i) *= d / row;
  }
  return ObservedDay{date, std::move(flows), std::move(demands), std::move(prices),
                     std::move(capacities), std::move(delays)};
}

Market market_for_day(const ObservedDay& day, const PreferenceParams& theta, const Market* base) {
  const auto n = static_cast<int>(day.flows.rows());
  const auto m = static_cast<int>(day.flows.cols());
  if (base && (base->n_users() != n || base->n_providers() != m)) {
    throw ShapeError("observed day " + day.date.str() + " does not match the market shape");
  }
  std::vector<Provider> providers(m);
  for (int j = 0; j < m; ++j) {
    providers[j].id = base ? base->providers()[j].id : "provider_" + std::to_string(j);
    providers[j].price = day.prices[j];
    providers[j].capacity = day.capacities[j];
    providers[j].is_target = (j == m - 1);
    if (!theta.biases.empty()) providers[j].perceived_value = theta.biases.at(j);
  }
  std::vector<UserGroup> users(n);
  for (int i = 0; i < n; ++i) {
    users[i].id = base ? base->users()[i].id : "user_" + std::to_string(i);
    users[i].demand = day.demands[i];
    users[i].delays.resize(m);
    for (int j = 0; j < m; ++j) users[i].delays[j] = day.delays(i, j);
  }
  double cap = base ? base->price_cap() : std::max(1.0, 2.0 * day.prices.maxCoeff());
  cap = std::max(cap, day.prices[m - 1]);
  return Market(std::move(providers), std::move(users), theta, cap);
}

ObservedDay observe(const Market& market, const FlowMatrix& flows, Date date) {
  return make_observed_day(date, flows, market.demands(), market.prices(), market.capacities(),
                           market.delays());
}

Market synth_market(std::uint64_t seed, int n_users, int m_providers, const SynthRanges& r) {
  if (n_users < 1) throw ConfigError("synth_market: n_users must be >= 1");
  if (m_providers < 2) throw ConfigError("synth_market: m_providers must be >= 2");
  auto check = [](const Range& range, const char* name, bool positive) {
    if (!(std::isfinite(range.low) && std::isfinite(range.high)) || range.low > range.high) {
      throw ConfigError(std::string("synth_market: range '") + name + "' is empty or inverted");
    }
    if (range.low < 0.0 || (positive && range.low <= 0.0)) {
      throw ConfigError(std::string("synth_market: range '") + name + "' must be nonnegative" +
                        (positive ? " and positive" : ""));
    }
  };
  check(r.price, "price", false);
  check(r.capacity, "capacity", true);
  check(r.delay, "delay", false);
  check(r.demand, "demand", false);
  check(r.bias, "bias", false);
  if (!(r.price_cap > 0.0) || r.price.low > r.price_cap) {
    throw ConfigError("synth_market: price_cap must be positive and >= price.low");
  }

  Rng rng(seed);
  std::vector<Provider> providers(m_providers);
  for (int j = 0; j < m_providers; ++j) {
    auto& p = providers[j];
    p.is_target = (j == m_providers - 1);
    p.id = p.is_target ? "target" : "rival_" + std::to_string(j);
    p.price = rng.uniform(r.price.low, r.price.high);
    p.capacity = rng.uniform(r.capacity.low, r.capacity.high);
    p.perceived_value = rng.uniform(r.bias.low, r.bias.high);
  }
  providers.back().price = std::min(providers.back().price, r.price_cap);
  std::vector<UserGroup> users(n_users);
  for (int i = 0; i < n_users; ++i) {
    users[i].id = "user_" + std::to_string(i);
    users[i].demand = rng.uniform(r.demand.low, r.demand.high);
    users[i].delays.resize(m_providers);
    for (auto& d : users[i].delays) d = rng.uniform(r.delay.low, r.delay.high);
  }
  PreferenceParams params{1.0, r.w_q, r.w_d, {}};
  return Market(std::move(providers), std::move(users), std::move(params), r.price_cap);
}

}  // namespace llmprice
