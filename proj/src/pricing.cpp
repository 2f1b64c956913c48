#include "llmprice/pricing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <thread>

#include "llmprice/errors.hpp"

namespace llmprice {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void finish(PricingResult& r) {
  std::sort(r.curve.begin(), r.curve.end(),
            [](const CurveSample& a, const CurveSample& b) { return a.price < b.price; });
  r.curve.erase(std::unique(r.curve.begin(), r.curve.end(),
                            [](const CurveSample& a, const CurveSample& b) {
                              return a.price == b.price;
                            }),
                r.curve.end());
  r.best_profit = -1.0;
  for (const auto& s : r.curve) {
    if (s.profit > r.best_profit) {
      r.best_profit = s.profit;
      r.best_price = s.price;
    }
  }
}

// Profits at every grid price, split over threads in contiguous chunks.
// Each solve is independent, so results do not depend on the split.
std::vector<ProfitPoint> profits_at(const Market& market, std::span<const double> grid,
                                    const SolveOptions& solve) {
  const std::size_t n = grid.size();
  std::vector<ProfitPoint> out(n);
  const std::size_t workers =
      n < 16 ? 1 : std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n / 8);
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t k = w * n / workers; k < (w + 1) * n / workers; ++k) out[k] = profit(grid[k], market, solve);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// Memoised profit evaluations for one market.
class ProfitCache {
 public:
  ProfitCache(const Market& market, const SolveOptions& solve) : market_(market), solve_(solve) {}

  void fill(std::span<const double> grid) {
    const auto v = profits_at(market_, grid, solve_);
    for (std::size_t k = 0; k < grid.size(); ++k) cache_.emplace(grid[k], v[k]);
  }

  double operator()(double price) {
    auto it = cache_.find(price);
    if (it == cache_.end()) it = cache_.emplace(price, profit(price, market_, solve_)).first;
    return it->second.profit;
  }

  std::vector<CurveSample> samples() const {
    std::vector<CurveSample> out;
    for (const auto& [p, v] : cache_) out.push_back({p, v.profit, v.load});
    return out;
  }

 private:
  const Market& market_;
  SolveOptions solve_;
  std::map<double, ProfitPoint> cache_;
};

// Golden-section search for a maximum on [a, b]. A probe lower than both of
// its neighbours breaks unimodality; the bracket is then split there.
void golden(ProfitCache& f, double a, double b, double tol, int depth) {
  constexpr double kInvPhi = 0.6180339887498949;
  double fa = f(a), fb = f(b);
  double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    const bool valley1 = f1 < fa && f1 < f2;
    const bool valley2 = f2 < f1 && f2 < fb;
    if ((valley1 || valley2) && depth < 6) {
      const double cut = valley1 ? x1 : x2;
      golden(f, a, cut, tol, depth + 1);
      golden(f, cut, b, tol, depth + 1);
      return;
    }
    if (f1 >= f2) {
      b = x2;
      fb = f2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      fa = f1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = f(x2);
    }
  }
}

}  // namespace

ProfitPoint profit(double price, const Market& market, const SolveOptions& solve) {
  if (!(price >= 0.0) || price > market.price_cap() * (1.0 + 1e-12)) {
    throw ArgumentError("price " + std::to_string(price) + " outside [0, price_cap]");
  }
  const Market m = market.with_target_price(std::min(price, market.price_cap()));
  const auto r = solve_equilibrium(m, solve);
  const double load = r.flow.col(m.target_index()).sum();
  return {price * load, load};
}

std::vector<CurveSample> profit_curve(const Market& market, std::span<const double> grid,
                                      const SolveOptions& solve) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw ArgumentError("price grid must be sorted");
  std::vector<CurveSample> out;
  out.reserve(grid.size());
  const auto v = profits_at(market, grid, solve);
  for (std::size_t k = 0; k < grid.size(); ++k) out.push_back({grid[k], v[k].profit, v[k].load});
  return out;
}

PricingResult optimize_price_sweep(const Market& market, const SweepOptions& opts) {
  const auto t0 = Clock::now();
  if (opts.coarse_points < 8) throw ArgumentError("sweep needs at least 8 coarse points");
  const double cap = market.price_cap();
  const double tol = opts.refine_tol > 0.0 ? opts.refine_tol : cap * 1e-4;
  const int n = opts.coarse_points;

  ProfitCache f(market, opts.solve);
  std::vector<double> grid(n), val(n);
  for (int k = 0; k < n; ++k) grid[k] = k == n - 1 ? cap : cap * k / (n - 1);
  f.fill(grid);
  for (int k = 0; k < n; ++k) val[k] = f(grid[k]);
  // Local maxima of the coarse curve, best first.
  std::vector<int> peaks;
  for (int k = 0; k < n; ++k) {
    const bool left = k == 0 || val[k] >= val[k - 1];
    const bool right = k == n - 1 || val[k] >= val[k + 1];
    if (left && right) peaks.push_back(k);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return val[a] > val[b]; });
  if (static_cast<int>(peaks.size()) > opts.refine_peaks) peaks.resize(opts.refine_peaks);
  for (int k : peaks) {
    golden(f, grid[std::max(k - 1, 0)], grid[std::min(k + 1, n - 1)], tol, 0);
  }

  PricingResult r;
  r.method = "sweep_refine";
  r.curve = f.samples();
  finish(r);
  r.solve_time = seconds_since(t0);
  return r;
}

PricingResult optimize_price_exact(const Market& market) {
  const auto t0 = Clock::now();
  const int n = market.n_users();
  const int m = market.n_providers();
  if (n * m > kExactMaxCells) {
    throw ScaleError("exact pricing enumerates 2^(n*m) support patterns and is limited to n*m <= " +
                     std::to_string(kExactMaxCells) + " (got " + std::to_string(n * m) +
                     "); use the sweep method");
  }
  const int s = market.target_index();
  const double cap = market.price_cap();
  const double wq = market.params().w_q;
  const double wp = market.params().w_p;
  if (!(wq > 0.0)) throw DegenerateError("exact pricing requires w_q > 0");
  const Eigen::MatrixXd c0 = market.with_target_price(0.0).fixed_costs();
  const Eigen::VectorXd& alpha = market.capacities();

  std::vector<int> users;
  for (int i = 0; i < n; ++i)
    if (market.demands()[i] > 0.0) users.push_back(i);
  const int u = static_cast<int>(users.size());

  // Closed-form candidates collected from every valid piece.
  std::vector<double> candidates{0.0, cap};
  const int masks = (1 << m) - 1;
  std::vector<int> pattern(u, 1);
  while (true) {
    std::vector<std::pair<int, int>> coords;
    for (int a = 0; a < u; ++a)
      for (int j = 0; j < m; ++j)
        if (pattern[a] >> j & 1) coords.emplace_back(a, j);
    const int k = static_cast<int>(coords.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + u, k + u);
    Eigen::VectorXd r0 = Eigen::VectorXd::Zero(k + u), r1 = Eigen::VectorXd::Zero(k + u);
    for (int a = 0; a < k; ++a) {
      const auto [ua, ja] = coords[a];
      for (int b = 0; b < k; ++b) {
        const auto [ub, jb] = coords[b];
        if (ja == jb) kkt(a, b) = (ua == ub ? 2.0 : 1.0) * wq / alpha[ja];
      }
      kkt(a, k + ua) = -1.0;
      kkt(k + ua, a) = 1.0;
      r0[a] = -c0(users[ua], ja);
      r1[a] = ja == s ? -wp : 0.0;
    }
    for (int a = 0; a < u; ++a) r0[k + a] = market.demands()[users[a]];
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
    const Eigen::VectorXd z0 = lu.solve(r0), z1 = lu.solve(r1);

    double lo = 0.0, hi = cap;
    auto require = [&](double c, double v) {  // c + v p >= 0
      const double slack = 1e-9 * (1.0 + std::abs(c) + std::abs(v) * cap);
      if (std::abs(v) <= 1e-14) {
        if (c < -slack) hi = -1.0;
      } else if (v > 0.0) {
        lo = std::max(lo, (-c - slack) / v);
      } else {
        hi = std::min(hi, (-c - slack) / v);
      }
    };
    Eigen::VectorXd load0 = Eigen::VectorXd::Zero(m), load1 = Eigen::VectorXd::Zero(m);
    for (int a = 0; a < k; ++a) {
      require(z0[a], z1[a]);
      load0[coords[a].second] += z0[a];
      load1[coords[a].second] += z1[a];
    }
    for (int a = 0; a < u; ++a) {
      for (int j = 0; j < m; ++j) {
        if (pattern[a] >> j & 1) continue;
        const double c = c0(users[a], j) + wq / alpha[j] * load0[j] - z0[k + a];
        const double v = (j == s ? wp : 0.0) + wq / alpha[j] * load1[j] - z1[k + a];
        require(c, v);
      }
    }
    if (lo <= hi) {
      lo = std::clamp(lo, 0.0, cap);
      hi = std::clamp(hi, 0.0, cap);
      candidates.push_back(lo);
      candidates.push_back(hi);
      // profit = p (load0_s + load1_s p), concave when load1_s < 0
      if (load1[s] < 0.0) {
        const double p = -load0[s] / (2.0 * load1[s]);
        if (p > lo && p < hi) candidates.push_back(p);
      }
    }

    int a = 0;
    while (a < u && pattern[a] == masks) pattern[a++] = 1;
    if (a == u) break;
    ++pattern[a];
  }

  PricingResult r;
  r.method = "exact_piecewise";
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  SolveOptions tight;
  tight.tolerance = 1e-11;
  r.curve = profit_curve(market, candidates, tight);
  finish(r);
  r.solve_time = seconds_since(t0);
  return r;
}

PricingResult optimize_price_dense(const Market& market, double step_fraction,
                                   const SolveOptions& solve) {
  const auto t0 = Clock::now();
  if (!(step_fraction > 0.0 && step_fraction <= 0.5)) {
    throw ArgumentError("dense grid step fraction must lie in (0, 0.5]");
  }
  const int steps = static_cast<int>(std::ceil(1.0 / step_fraction - 1e-9));
  std::vector<double> grid(steps + 1);
  for (int k = 0; k <= steps; ++k) grid[k] = k == steps ? market.price_cap() : market.price_cap() * k / steps;
  PricingResult r;
  r.method = "dense_grid";
  r.curve = profit_curve(market, grid, solve);
  finish(r);
  r.solve_time = seconds_since(t0);
  return r;
}

PricingResult optimize_price_oracle(const Market& market) {
  if (market.n_users() * market.n_providers() <= kExactMaxCells) return optimize_price_exact(market);
  return optimize_price_dense(market);
}

}  // namespace llmprice
