#include <doctest.h>

#include <vector>

#include "llmprice/errors.hpp"
#include "llmprice/sensitivity.hpp"
#include "test_support.hpp"

using namespace llmprice;
using llmprice::testing::make_market;

namespace {

SolveOptions tight() {
  SolveOptions o;
  o.tolerance = 1e-11;
  return o;
}

// Central finite difference of the equilibrium flow, re-solving each side.
Eigen::MatrixXd fd_flow(const Market& market, const Param& p, double h) {
  const auto up = solve_equilibrium(perturb(market, p, h), tight());
  const auto dn = solve_equilibrium(perturb(market, p, -h), tight());
  return (up.flow - dn.flow) / (2.0 * h);
}

std::vector<Param> all_params(const Market& m) {
  std::vector<Param> out{Param::weight_q(), Param::weight_d()};
  for (int j = 0; j < m.n_providers(); ++j) {
    out.push_back(Param::bias(j));
    out.push_back(Param::price(j));
    out.push_back(Param::capacity(j));
    out.push_back(Param::log_capacity(j));
  }
  for (int i = 0; i < m.n_users(); ++i)
    for (int j = 0; j < m.n_providers(); ++j) out.push_back(Param::delay(i, j));
  return out;
}

bool fd_safe(const Market& m, const Param& p, double h) {
  // Keep perturbed values inside the valid (nonnegative) domain.
  return p.kind == Param::Kind::kLogCapacity || value_of(m, p) > 2.0 * h;
}

}  // namespace

TEST_CASE("equilibrium_jacobian examples") {
  SUBCASE("single provider: flow fixed by the demand constraint") {
    const Market m = make_market({{2.0}, {3.0}, {}, {4.0, 5.0}});
    const auto r = solve_equilibrium(m);
    for (const auto& p : all_params(m)) {
      CHECK(equilibrium_jacobian(r, m, p).d_flow.cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("two-route instance, derivative in p_1") {
    const Market m = make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}});
    const auto r = solve_equilibrium(m);
    const auto jac = equilibrium_jacobian(r, m, Param::price(0));
    CHECK(jac.d_flow(0, 0) == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(jac.d_flow(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
    const auto fd = fd_flow(m, Param::price(0), 1e-5);
    CHECK(fd(0, 0) == doctest::Approx(-0.25).epsilon(1e-6));
    // Bias enters with the opposite sign of price.
    const auto jb = equilibrium_jacobian(r, m, Param::bias(0));
    CHECK((jb.d_flow + jac.d_flow).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("crossing a kink changes the active set") {
    // Route 2 is abandoned once p_2 >= 1 + 2 * 10 = 21.
    const Market base = make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}});
    const auto with_p2 = [&](double p2) { return perturb(base, Param::price(1), p2 - 2.0); };
    const Market below = with_p2(15.0);
    const auto jb = equilibrium_jacobian(solve_equilibrium(below), below, Param::price(1));
    CHECK(jb.d_flow(0, 0) == doctest::Approx(0.25));
    CHECK(fd_flow(below, Param::price(1), 1e-5)(0, 0) == doctest::Approx(0.25).epsilon(1e-6));
    const Market above = with_p2(30.0);
    const auto ja = equilibrium_jacobian(solve_equilibrium(above), above, Param::price(1));
    CHECK(ja.d_flow.cwiseAbs().maxCoeff() == 0.0);
    CHECK(!ja.active_set(0, 1));
    CHECK(fd_flow(above, Param::price(1), 1e-5).cwiseAbs().maxCoeff() <= 1e-7);

    const Market kink = with_p2(21.0);
    const auto rk = solve_equilibrium(kink, tight());
    CHECK_THROWS_AS(equilibrium_jacobian(rk, kink, Param::price(1)), BoundaryPointError);
    SensitivityOptions allow;
    allow.allow_degenerate = true;
    const auto jk = equilibrium_jacobian(rk, kink, Param::price(1), allow);
    CHECK(jk.degenerate);
  }
}

TEST_CASE("loss_gradient") {
  const Market m = make_market({{1.0, 2.0}, {1.0, 1.0}, {}, {10.0}});
  const auto r = solve_equilibrium(m);
  const std::vector<Param> wrt{Param::weight_q(), Param::price(0), Param::bias(1)};
  CHECK(loss_gradient(Eigen::MatrixXd::Zero(1, 2), r, m, wrt).gradient.isZero(0.0));
  // Squared error against its own minimiser.
  FlowMatrix target(1, 2);
  target << 5.25, 4.75;
  const auto g = loss_gradient(2.0 * (r.flow - target), r, m, wrt);
  CHECK(g.gradient.cwiseAbs().maxCoeff() <= 1e-10);

  SUBCASE("matches finite differences of the full loss on a random market") {
    const Market mk = synth_market(11, 3, 4);
    const auto base = solve_equilibrium(mk, tight());
    Rng rng(5);
    FlowMatrix goal = base.flow;
    for (int i = 0; i < goal.rows(); ++i)
      for (int j = 0; j < goal.cols(); ++j) goal(i, j) += rng.uniform(-1.0, 1.0);
    const auto params = all_params(mk);
    const auto lg = loss_gradient(2.0 * (base.flow - goal), base, mk, params);
    CHECK(!lg.subgradient);
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!fd_safe(mk, params[k], h)) continue;
      auto loss = [&](double delta) {
        const auto r2 = solve_equilibrium(perturb(mk, params[k], delta), tight());
        return (r2.flow - goal).squaredNorm();
      };
      const double fd = (loss(h) - loss(-h)) / (2 * h);
      INFO(params[k].name());
      CHECK(std::abs(fd - lg.gradient[k]) <= std::max(1e-4 * std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("implicit derivatives agree with finite differences on random markets") {
  int checked_markets = 0;
  for (std::uint64_t seed = 1; checked_markets < 20 && seed < 200; ++seed) {
    const Market m = synth_market(4000 + seed, 1 + seed % 4, 2 + seed % 5);
    const auto r = solve_equilibrium(m, tight());
    std::optional<KktSystem> kkt;
    try {
      kkt.emplace(r, m);
    } catch (const BoundaryPointError&) {
      continue;
    }
    ++checked_markets;
    for (const auto& p : all_params(m)) {
      const double h = 1e-5;
      const Eigen::MatrixXd analytic = kkt->d_flow(p);
      for (int i = 0; i < m.n_users(); ++i) CHECK(std::abs(analytic.row(i).sum()) <= 1e-10);
      if (!fd_safe(m, p, h)) continue;
      const Eigen::MatrixXd fd = fd_flow(m, p, h);
      for (int i = 0; i < m.n_users(); ++i) {
        for (int j = 0; j < m.n_providers(); ++j) {
          INFO(p.name(), " at (", i, ",", j, ")");
          CHECK(std::abs(fd(i, j) - analytic(i, j)) <=
                std::max(1e-4 * std::abs(fd(i, j)), 1e-7));
        }
      }
    }
  }
  CHECK(checked_markets == 20);
}
