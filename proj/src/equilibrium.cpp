#include "llmprice/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "llmprice/errors.hpp"

namespace llmprice {

namespace {

void check_shape(const FlowMatrix& flow, const Market& market) {
  if (flow.rows() != market.n_users() || flow.cols() != market.n_providers()) {
    std::ostringstream msg;
    msg << "flow is " << flow.rows() << "x" << flow.cols() << ", market is " << market.n_users()
        << "x" << market.n_providers();
    throw ShapeError(msg.str());
  }
}

void check_user(int user, const Market& market) {
  if (user < 0 || user >= market.n_users()) throw ShapeError("user index out of range");
}

// Minimises sum_j f_j (c_j + f_j / (2 a_j)) over {f >= 0, sum f = demand}:
// f_j = a_j * max(0, level - c_j) with the level fixed by the demand.
// `order` is scratch space of size m.
void water_fill(const Eigen::Ref<const Eigen::VectorXd>& base, const Eigen::Ref<const Eigen::VectorXd>& a,
                double demand, std::vector<int>& order, Eigen::Ref<Eigen::RowVectorXd> out) {
  const int m = static_cast<int>(base.size());
  order.resize(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return base[x] < base[y]; });
  double sum_a = 0.0, sum_ca = 0.0, level = base[order[0]];
  int active = 0;
  for (int k = 0; k < m; ++k) {
    const int j = order[k];
    sum_a += a[j];
    sum_ca += a[j] * base[j];
    level = (demand + sum_ca) / sum_a;
    active = k + 1;
    if (k + 1 == m || level <= base[order[k + 1]]) break;
  }
  out.setZero();
  double total = 0.0;
  for (int k = 0; k < active; ++k) {
    const int j = order[k];
    out[j] = std::max(0.0, a[j] * (level - base[j]));
    total += out[j];
  }
  // Remove rounding drift so the row sum matches the demand.
  if (total > 0.0 && demand > 0.0) out *= demand / total;
}

}  // namespace

bool is_feasible(const FlowMatrix& flow, const Market& market, double rel_tol) {
  if (flow.rows() != market.n_users() || flow.cols() != market.n_providers()) return false;
  if (!flow.allFinite() || (flow.array() < 0.0).any()) return false;
  for (int i = 0; i < market.n_users(); ++i) {
    const double d = market.demands()[i];
    if (std::abs(flow.row(i).sum() - d) > rel_tol * std::max(1.0, d)) return false;
  }
  return true;
}

double user_cost(int user, const FlowMatrix& flow, const Market& market) {
  check_shape(flow, market);
  check_user(user, market);
  const auto& w = market.params();
  const Eigen::RowVectorXd load = flow.colwise().sum();
  double cost = 0.0;
  for (int j = 0; j < market.n_providers(); ++j) {
    const double q = load[j] / market.capacities()[j];
    cost += flow(user, j) * (w.w_p * market.prices()[j] + w.w_q * q +
                             w.w_d * market.delays()(user, j) - market.biases()[j]);
  }
  return cost;
}

double potential(const FlowMatrix& flow, const Market& market) {
  check_shape(flow, market);
  const double fixed = (market.fixed_costs().array() * flow.array()).sum();
  const auto& w = market.params();
  double congestion = 0.0;
  for (int j = 0; j < market.n_providers(); ++j) {
    const double load = flow.col(j).sum();
    congestion += w.w_q / (2.0 * market.capacities()[j]) * (load * load + flow.col(j).squaredNorm());
  }
  return fixed + congestion;
}

Eigen::MatrixXd marginal_costs(const FlowMatrix& flow, const Market& market) {
  check_shape(flow, market);
  Eigen::MatrixXd mc = market.fixed_costs();
  const Eigen::RowVectorXd load = flow.colwise().sum();
  const double wq = market.params().w_q;
  for (int j = 0; j < market.n_providers(); ++j) {
    const double s = wq / market.capacities()[j];
    mc.col(j).array() += s * (load[j] + flow.col(j).array());
  }
  return mc;
}

double marginal_cost(int user, int provider, const FlowMatrix& flow, const Market& market) {
  check_shape(flow, market);
  check_user(user, market);
  if (provider < 0 || provider >= market.n_providers()) throw ShapeError("provider index out of range");
  const auto& w = market.params();
  const double load = flow.col(provider).sum();
  return w.w_p * market.prices()[provider] + w.w_d * market.delays()(user, provider) -
         market.biases()[provider] +
         w.w_q / market.capacities()[provider] * (load + flow(user, provider));
}

Eigen::RowVectorXd best_response(int user, const FlowMatrix& flow, const Market& market) {
  check_shape(flow, market);
  check_user(user, market);
  const double wq = market.params().w_q;
  if (!(wq > 0.0)) throw DegenerateError("best_response requires w_q > 0");
  const int m = market.n_providers();
  const auto& w = market.params();
  Eigen::VectorXd base(m), a(m);
  for (int j = 0; j < m; ++j) {
    const double others = flow.col(j).sum() - flow(user, j);
    base[j] = w.w_p * market.prices()[j] + w.w_d * market.delays()(user, j) - market.biases()[j] +
              wq * others / market.capacities()[j];
    a[j] = market.capacities()[j] / (2.0 * wq);
  }
  Eigen::RowVectorXd out(m);
  std::vector<int> order;
  water_fill(base, a, market.demands()[user], order, out);
  return out;
}

double wardrop_gap(const FlowMatrix& flow, const Market& market) {
  const Eigen::MatrixXd mc = marginal_costs(flow, market);
  double gap = 0.0;
  for (int i = 0; i < market.n_users(); ++i) {
    const double d = market.demands()[i];
    if (d <= 0.0) continue;
    const double used_floor = kUsedRouteFraction * d;
    double max_used = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < market.n_providers(); ++j) {
      if (flow(i, j) > used_floor) max_used = std::max(max_used, mc(i, j));
    }
    if (!std::isfinite(max_used)) continue;
    gap = std::max(gap, max_used - mc.row(i).minCoeff());
  }
  return gap;
}

namespace {

// Flow-weighted mean marginal over used routes.
Eigen::VectorXd multipliers(const FlowMatrix& flow, const Eigen::MatrixXd& mc, const Market& market) {
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(market.n_users());
  for (int i = 0; i < market.n_users(); ++i) {
    const double d = market.demands()[i];
    if (d <= 0.0) continue;
    double num = 0.0, den = 0.0;
    for (int j = 0; j < market.n_providers(); ++j) {
      if (flow(i, j) > kUsedRouteFraction * d) {
        num += flow(i, j) * mc(i, j);
        den += flow(i, j);
      }
    }
    lambda[i] = den > 0.0 ? num / den : mc.row(i).minCoeff();
  }
  return lambda;
}

double kkt_residual_impl(const FlowMatrix& flow, const Eigen::MatrixXd& mc,
                         const Eigen::VectorXd& lambda, const Market& market) {
  double r = 0.0;
  for (int i = 0; i < market.n_users(); ++i) {
    const double d = market.demands()[i];
    r = std::max(r, std::abs(flow.row(i).sum() - d) / std::max(1.0, d));
    for (int j = 0; j < market.n_providers(); ++j) {
      r = std::max(r, -flow(i, j));
      if (d <= 0.0) continue;
      if (flow(i, j) > kUsedRouteFraction * d) {
        r = std::max(r, std::abs(mc(i, j) - lambda[i]));
      } else {
        r = std::max(r, lambda[i] - mc(i, j));
      }
    }
  }
  return r;
}

}  // namespace

double kkt_residual(const FlowMatrix& flow, const Market& market) {
  const Eigen::MatrixXd mc = marginal_costs(flow, market);
  return kkt_residual_impl(flow, mc, multipliers(flow, mc, market), market);
}

EquilibriumResult solve_equilibrium(const Market& market, const SolveOptions& options) {
  const int n = market.n_users();
  const int m = market.n_providers();
  const double wq = market.params().w_q;
  if (!(wq > 0.0)) throw DegenerateError("solve_equilibrium requires w_q > 0");

  FlowMatrix flow(n, m);
  if (options.initial) {
    if (!is_feasible(*options.initial, market, 1e-6)) {
      throw ArgumentError("solve_equilibrium: initial flow is not feasible");
    }
    flow = *options.initial;
  } else {
    const Eigen::VectorXd& cap = market.capacities();
    flow = market.demands() * (cap / cap.sum()).transpose();
  }

  const Eigen::MatrixXd fixed = market.fixed_costs();
  Eigen::VectorXd a(m), slope(m);
  for (int j = 0; j < m; ++j) {
    a[j] = market.capacities()[j] / (2.0 * wq);
    slope[j] = wq / market.capacities()[j];
  }
  Eigen::VectorXd load = flow.colwise().sum().transpose();
  Eigen::VectorXd base(m);
  Eigen::RowVectorXd row(m);
  std::vector<int> order;

  EquilibriumResult result;
  double gap = wardrop_gap(flow, market);
  int round = 0;
  while (gap > options.tolerance) {
    if (round >= options.max_rounds) {
      std::ostringstream msg;
      msg << "equilibrium did not converge in " << options.max_rounds
          << " rounds (wardrop gap " << gap << ")";
      throw ConvergenceError(msg.str(), gap);
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) base[j] = fixed(i, j) + slope[j] * (load[j] - flow(i, j));
      water_fill(base, a, market.demands()[i], order, row);
      load += (row - flow.row(i)).transpose();
      flow.row(i) = row;
    }
    // Refresh loads to stop incremental drift.
    load = flow.colwise().sum().transpose();
    ++round;
    gap = wardrop_gap(flow, market);
  }

  const Eigen::MatrixXd mc = marginal_costs(flow, market);
  result.user_multipliers = multipliers(flow, mc, market);
  result.kkt_residual = kkt_residual_impl(flow, mc, result.user_multipliers, market);
  result.wardrop_gap = gap;
  result.potential = potential(flow, market);
  result.iterations = round;
  result.congestion = (flow.colwise().sum().transpose().array() / market.capacities().array()).matrix();
  result.flow = std::move(flow);
  if (result.kkt_residual > options.tolerance) {
    std::ostringstream msg;
    msg << "equilibrium KKT residual " << result.kkt_residual << " exceeds tolerance";
    throw ConvergenceError(msg.str(), result.kkt_residual);
  }
  return result;
}

}  // namespace llmprice
