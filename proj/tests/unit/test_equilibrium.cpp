#include <doctest.h>

#include <cmath>

#include "llmprice/equilibrium.hpp"
#include "llmprice/errors.hpp"
#include "test_support.hpp"

using namespace llmprice;
using llmprice::testing::make_market;
using llmprice::testing::random_feasible_flow;
using llmprice::testing::SmallMarket;
using llmprice::testing::grid_minimiser;

namespace {

// One user, two providers, D=10, p=(1,2), alpha=(1,1); equilibrium (5.25, 4.75).
Market two_route_market() { return make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}}); }

}  // namespace

TEST_CASE("user_cost matches hand arithmetic") {
  const Market mono = make_market({{1.0}, {10.0}, {}, {10.0}});
  FlowMatrix f(1, 1);
  f << 10.0;
  CHECK(user_cost(0, f, mono) == doctest::Approx(20.0));

  const Market zero = make_market({{1.0}, {10.0}, {}, {0.0}});
  CHECK(user_cost(0, FlowMatrix::Zero(1, 1), zero) == 0.0);

  FlowMatrix g(1, 2);
  g << 5.25, 4.75;
  // Direct summation: 5.25 (1 + 5.25) + 4.75 (2 + 4.75).
  const double oracle = 5.25 * (1.0 + 5.25) + 4.75 * (2.0 + 4.75);
  CHECK(user_cost(0, g, two_route_market()) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(64.875));

  CHECK_THROWS_AS(user_cost(0, FlowMatrix::Zero(2, 2), two_route_market()), ShapeError);
}

TEST_CASE("potential") {
  const Market m2 = make_market({{0.0, 0.0}, {1.0, 1.0}, {}, {1.0, 1.0}});
  CHECK(potential(FlowMatrix::Zero(2, 2), m2) == 0.0);
  FlowMatrix f(2, 2);
  f << 1.0, 0.0, 1.0, 0.0;
  // Hand expansion: (1/2)(2^2 + 1 + 1).
  CHECK(potential(f, m2) == doctest::Approx(3.0));

  SUBCASE("single user: potential gradient equals cost gradient") {
    const Market m = two_route_market();
    FlowMatrix g(1, 2);
    g << 3.0, 7.0;
    const double h = 1e-6;
    for (int j = 0; j < 2; ++j) {
      FlowMatrix up = g, dn = g;
      up(0, j) += h;
      dn(0, j) -= h;
      const double dphi = (potential(up, m) - potential(dn, m)) / (2 * h);
      const double dc = (user_cost(0, up, m) - user_cost(0, dn, m)) / (2 * h);
      CHECK(dphi == doctest::Approx(dc).epsilon(1e-7));
    }
  }
}

TEST_CASE("marginal_cost") {
  SUBCASE("zero load reduces to the fixed cost") {
    const Market m = make_market({{2.0, 3.0}, {4.0, 5.0}, {1.0, 0.5}, {7.0}, {{0.3, 0.9}}});
    const FlowMatrix f = FlowMatrix::Zero(1, 2);
    CHECK(marginal_cost(0, 0, f, m) == doctest::Approx(2.0 + 0.3 - 1.0));
    CHECK(marginal_cost(0, 1, f, m) == doctest::Approx(3.0 + 0.9 - 0.5));
  }
  SUBCASE("hand arithmetic: total load 20, own flow 5") {
    const Market m = make_market({{2.0}, {10.0}, {1.0}, {5.0, 15.0}, {{0.5}, {0.5}}});
    FlowMatrix f(2, 1);
    f << 5.0, 15.0;
    CHECK(marginal_cost(0, 0, f, m) == doctest::Approx(4.0));
  }
  SUBCASE("matches finite differences of the potential at random points") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
      const Market m = synth_market(1000 + trial, 1 + trial % 4, 2 + trial % 5);
      const FlowMatrix f = random_feasible_flow(m, rng);
      const Eigen::MatrixXd mc = marginal_costs(f, m);
      const int i = static_cast<int>(rng.below(m.n_users()));
      const int j = static_cast<int>(rng.below(m.n_providers()));
      const double h = 1e-4;
      FlowMatrix up = f, dn = f;
      up(i, j) += h;
      dn(i, j) -= h;
      // Potential is quadratic, so central differences are exact up to rounding.
      const double fd = (potential(up, m) - potential(dn, m)) / (2 * h);
      CHECK(std::abs(fd - mc(i, j)) <= 1e-6 * std::max(1.0, std::abs(mc(i, j))));
      CHECK(marginal_cost(i, j, f, m) == doctest::Approx(mc(i, j)).epsilon(1e-14));
    }
  }
}

TEST_CASE("best_response") {
  SUBCASE("identical providers split evenly") {
    const Market m = make_market({{3.0, 3.0}, {2.0, 2.0}, {}, {9.0}});
    const auto br = best_response(0, FlowMatrix::Zero(1, 2), m);
    CHECK(br[0] == doctest::Approx(4.5));
    CHECK(br[1] == doctest::Approx(4.5));
  }
  SUBCASE("two-route instance against the grid oracle") {
    const Market m = two_route_market();
    const auto br = best_response(0, FlowMatrix::Zero(1, 2), m);
    const auto [g1, g2] = grid_minimiser(m, 1e-4);
    CHECK(std::abs(br[0] - g1) <= 1e-4);
    CHECK(std::abs(br[1] - g2) <= 1e-4);
    CHECK(br[0] == doctest::Approx(5.25).epsilon(1e-14));
    CHECK(br[1] == doctest::Approx(4.75).epsilon(1e-14));
  }
  SUBCASE("expensive route gets exactly zero") {
    const Market m = make_market({{1.0, 1.0, 100.0}, {1.0, 1.0, 1.0}, {}, {10.0}});
    const auto br = best_response(0, FlowMatrix::Zero(1, 3), m);
    CHECK(br[2] == 0.0);
    // 2-D grid oracle over the simplex, step 0.01.
    double best = std::numeric_limits<double>::infinity(), b1 = 0, b2 = 0;
    FlowMatrix f(1, 3);
    for (int a = 0; a <= 1000; ++a) {
      for (int b = 0; a + b <= 1000; ++b) {
        f << a * 0.01, b * 0.01, 10.0 - (a + b) * 0.01;
        const double c = user_cost(0, f, m);
        if (c < best) {
          best = c;
          b1 = f(0, 0);
          b2 = f(0, 1);
        }
      }
    }
    CHECK(std::abs(br[0] - b1) <= 0.011);
    CHECK(std::abs(br[1] - b2) <= 0.011);
    CHECK(br[0] + br[1] == doctest::Approx(10.0));
  }
  SUBCASE("w_q = 0 is degenerate") {
    auto s = SmallMarket{{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}};
    s.w_q = 0.0;
    CHECK_THROWS_AS(best_response(0, FlowMatrix::Zero(1, 2), make_market(s)), DegenerateError);
  }
}

TEST_CASE("solve_equilibrium examples") {
  SUBCASE("monopoly") {
    const Market m = make_market({{4.0}, {5.0}, {}, {3.0, 7.0}});
    const auto r = solve_equilibrium(m);
    CHECK(r.flow(0, 0) == doctest::Approx(3.0));
    CHECK(r.flow(1, 0) == doctest::Approx(7.0));
    CHECK(r.congestion[0] == doctest::Approx(2.0));
  }
  SUBCASE("two-route instance") {
    const auto r = solve_equilibrium(two_route_market());
    CHECK(r.flow(0, 0) == doctest::Approx(5.25).epsilon(1e-12));
    CHECK(r.flow(0, 1) == doctest::Approx(4.75).epsilon(1e-12));
    CHECK(r.user_multipliers[0] == doctest::Approx(1.0 + 2 * 5.25));
    CHECK(r.wardrop_gap <= 1e-8);
  }
  SUBCASE("symmetric two users") {
    const Market m = make_market({{2.0, 2.0}, {3.0, 3.0}, {}, {6.0, 6.0}});
    const auto r = solve_equilibrium(m);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) CHECK(r.flow(i, j) == doctest::Approx(3.0));
  }
  SUBCASE("zero-demand users keep empty rows") {
    const Market m = make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {0.0, 10.0}});
    const auto r = solve_equilibrium(m);
    CHECK(r.flow.row(0).norm() == 0.0);
    CHECK(r.user_multipliers[0] == 0.0);
  }
  SUBCASE("round budget exhaustion raises a convergence error") {
    const Market m = synth_market(5, 10, 8);
    SolveOptions opts;
    opts.max_rounds = 1;
    opts.tolerance = 1e-14;
    CHECK_THROWS_AS(solve_equilibrium(m, opts), ConvergenceError);
  }
}

TEST_CASE("wardrop_gap") {
  FlowMatrix f(1, 2);
  f << 10.0, 0.0;
  // M_1 = 1 + (10 + 10), M_2 = 2.
  CHECK(wardrop_gap(f, two_route_market()) == doctest::Approx(19.0));
  const Market empty = make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {0.0, 0.0}});
  CHECK(wardrop_gap(FlowMatrix::Zero(2, 2), empty) == 0.0);
}

TEST_CASE("properties over random markets") {
  Rng rng(77);
  SUBCASE("best response never increases the potential") {
    for (int trial = 0; trial < 30; ++trial) {
      const Market m = synth_market(300 + trial, 2 + trial % 5, 2 + trial % 6);
      FlowMatrix f = random_feasible_flow(m, rng);
      double phi = potential(f, m);
      for (int round = 0; round < 5; ++round) {
        for (int i = 0; i < m.n_users(); ++i) {
          f.row(i) = best_response(i, f, m);
          const double next = potential(f, m);
          CHECK(next <= phi + 1e-9 * std::max(1.0, std::abs(phi)));
          phi = next;
        }
      }
    }
  }
  SUBCASE("uniqueness from random starts") {
    for (int trial = 0; trial < 5; ++trial) {
      const Market m = synth_market(500 + trial, 6, 5);
      const auto ref = solve_equilibrium(m);
      for (int start = 0; start < 10; ++start) {
        SolveOptions opts;
        opts.initial = random_feasible_flow(m, rng);
        const auto r = solve_equilibrium(m, opts);
        CHECK((r.flow - ref.flow).cwiseAbs().maxCoeff() <= 1e-6);
      }
    }
  }
  SUBCASE("n=1, m=2 matches the brute-force grid") {
    for (int trial = 0; trial < 20; ++trial) {
      SynthRanges ranges;
      ranges.demand = {1.0, 10.0};
      const Market m = synth_market(700 + trial, 1, 2, ranges);
      const auto r = solve_equilibrium(m);
      const auto [g1, g2] = grid_minimiser(m, 1e-4);
      CHECK(std::abs(r.flow(0, 0) - g1) <= 1e-3);
      CHECK(std::abs(r.flow(0, 1) - g2) <= 1e-3);
    }
  }
  SUBCASE("feasibility and certificates") {
    for (int trial = 0; trial < 20; ++trial) {
      const Market m = synth_market(900 + trial, 1 + trial % 7, 2 + trial % 9);
      const auto r = solve_equilibrium(m);
      CHECK(is_feasible(r.flow, m));
      CHECK(r.wardrop_gap <= 1e-8);
      CHECK(r.kkt_residual <= 1e-8);
      CHECK(r.wardrop_gap >= 0.0);
      for (int j = 0; j < m.n_providers(); ++j) {
        CHECK(r.congestion[j] == doctest::Approx(r.flow.col(j).sum() / m.capacities()[j]));
      }
    }
  }
}
