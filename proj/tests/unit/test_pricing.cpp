#include <doctest.h>

#include <cmath>

#include "llmprice/errors.hpp"
#include "llmprice/pricing.hpp"
#include "test_support.hpp"

using namespace llmprice;
using llmprice::testing::make_market;

namespace {

// Two routes, target is provider 0; load = 5.25 - (p - 1) / 4 while both are used.
Market interior_family(double cap = 100.0) {
  return make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}, {}, 1.0, 1.0, cap, 0});
}

Market monopoly() { return make_market({{3.0}, {4.0}, {}, {10.0, 5.0}, {}, 1.0, 1.0, 20.0}); }

double closed_form(double p) { return p * (5.25 - (p - 1.0) / 4.0); }

}  // namespace

TEST_CASE("profit examples") {
  const Market mono = monopoly();
  for (double p : {0.0, 1.0, 7.5, 20.0}) {
    const auto v = profit(p, mono);
    CHECK(v.load == doctest::Approx(15.0));
    CHECK(v.profit == doctest::Approx(15.0 * p));
  }
  const Market fam = interior_family();
  CHECK(profit(0.0, fam).profit == 0.0);
  CHECK(profit(1.0, fam).profit == doctest::Approx(5.25).epsilon(1e-9));
  CHECK(profit(1.0, fam).load == doctest::Approx(5.25).epsilon(1e-9));
  CHECK_THROWS_AS(profit(-1.0, fam), ArgumentError);
  CHECK_THROWS_AS(profit(101.0, fam), ArgumentError);
}

TEST_CASE("profit_curve examples") {
  const Market fam = interior_family();
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(1.0 + 0.05 * k);
  for (const auto& s : profit_curve(fam, grid)) CHECK(std::abs(s.profit - closed_form(s.price)) <= 1e-6);

  const std::vector<double> dup{2.0, 2.0, 3.0};
  const auto c = profit_curve(fam, dup);
  CHECK(c[0].profit == c[1].profit);
  CHECK(c[0].load == c[1].load);

  const std::vector<double> lin{0.0, 5.0, 10.0, 15.0};
  const auto mc = profit_curve(monopoly(), lin);
  for (std::size_t k = 2; k < mc.size(); ++k) {
    CHECK((mc[k].profit - mc[k - 1].profit) == doctest::Approx(mc[1].profit - mc[0].profit));
  }
  const std::vector<double> unsorted{2.0, 1.0};
  CHECK_THROWS_AS(profit_curve(fam, unsorted), ArgumentError);
}

TEST_CASE("optimize_price_sweep examples") {
  SUBCASE("monopoly returns the cap") {
    const auto r = optimize_price_sweep(monopoly());
    CHECK(r.best_price == 20.0);
    CHECK(r.best_profit == doctest::Approx(300.0));
  }
  SUBCASE("interior family against a dense 1e-4 grid") {
    const Market fam = interior_family(25.0);
    const auto r = optimize_price_sweep(fam);
    const double tol = 25.0 * 1e-4;
    CHECK(std::abs(r.best_price - 11.0) <= tol);
    CHECK(r.best_profit == doctest::Approx(30.25).epsilon(1e-6));
    double best_p = 0.0, best_v = -1.0;
    for (int k = 0; k <= 250000; ++k) {
      const double p = 1e-4 * k;
      const double v = profit(p, fam).profit;
      if (v > best_v) {
        best_v = v;
        best_p = p;
      }
    }
    CHECK(std::abs(r.best_price - best_p) <= tol);
    CHECK(r.best_profit >= best_v - 1e-9);
  }
  SUBCASE("doubling the coarse grid never loses more than the tolerance") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Market m = synth_market(seed, 3, 4);
      SweepOptions a, b;
      b.coarse_points = 128;
      const auto ra = optimize_price_sweep(m, a);
      const auto rb = optimize_price_sweep(m, b);
      const double load_scale = m.demands().sum();
      CHECK(rb.best_profit >= ra.best_profit - m.price_cap() * 1e-4 * load_scale);
    }
  }
  CHECK_THROWS_AS(optimize_price_sweep(monopoly(), SweepOptions{4}), ArgumentError);
}

TEST_CASE("optimize_price_exact examples") {
  SUBCASE("monopoly") {
    const auto r = optimize_price_exact(monopoly());
    CHECK(r.best_price == 20.0);
  }
  SUBCASE("interior family closed form") {
    const auto r = optimize_price_exact(interior_family());
    CHECK(r.best_price == doctest::Approx(11.0).epsilon(1e-9));
    CHECK(r.best_profit == doctest::Approx(30.25).epsilon(1e-9));
  }
  SUBCASE("agrees with the sweep on small random markets") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const Market m = synth_market(100 + seed, 2, 3);
      const auto ex = optimize_price_exact(m);
      const auto sw = optimize_price_sweep(m);
      INFO("seed ", seed);
      CHECK(ex.best_profit >= sw.best_profit * (1.0 - 1e-9));
      CHECK(sw.best_profit >= 0.999 * ex.best_profit);
      const double slope = ex.curve.empty() ? 0.0 : m.demands().sum();
      CHECK(ex.best_profit - sw.best_profit <= m.price_cap() * 1e-4 * slope);
    }
  }
  SUBCASE("never beaten by a dense grid") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Market m = synth_market(300 + seed, 3, 4);
      const auto ex = optimize_price_exact(m);
      const auto dense = optimize_price_dense(m, 1e-3);
      CHECK(ex.best_profit >= dense.best_profit * (1.0 - 1e-9));
    }
  }
  CHECK_THROWS_AS(optimize_price_exact(synth_market(1, 4, 4)), ScaleError);
}

TEST_CASE("pricing properties") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Market m = synth_market(seed, 1 + seed % 3, 2 + seed % 4);
    CHECK(profit(0.0, m).profit == 0.0);
    const auto r = optimize_price_sweep(m);
    CHECK(r.best_price >= 0.0);
    CHECK(r.best_price <= m.price_cap());
    for (const auto& s : r.curve) {
      CHECK(s.profit >= 0.0);
      CHECK(s.profit == doctest::Approx(s.price * s.load));
      CHECK(s.profit <= r.best_profit);
    }
    SolveOptions tight;
    tight.tolerance = 1e-11;
    CHECK(profit(r.best_price, m, tight).profit ==
          doctest::Approx(r.best_profit).epsilon(1e-8));

    // Continuity: no jump larger than a Lipschitz bound from the neighbours.
    std::vector<double> grid;
    for (int k = 0; k <= 400; ++k) grid.push_back(m.price_cap() * k / 400.0);
    const auto c = profit_curve(m, grid);
    double max_step = 0.0;
    for (std::size_t k = 1; k < c.size(); ++k) max_step = std::max(max_step, std::abs(c[k].profit - c[k - 1].profit));
    const double lipschitz = m.demands().sum() * (1.0 + m.price_cap() * m.capacities().maxCoeff() /
                                                            m.params().w_q);
    CHECK(max_step <= lipschitz * m.price_cap() / 400.0);
  }
}
