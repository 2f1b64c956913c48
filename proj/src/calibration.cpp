#include "llmprice/calibration.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "llmprice/errors.hpp"
#include "llmprice/random.hpp"
#include "llmprice/sensitivity.hpp"
#include "llmprice/simplex.hpp"

namespace llmprice {

namespace {

// Gauss-Newton steps are retried with growing damping up to this value.
constexpr double kMaxDamping = 1e8;

void check_days(std::span<const ObservedDay> days) {
  if (days.empty()) throw ArgumentError("calibration needs at least one observed day");
  const auto n = days.front().flows.rows();
  const auto m = days.front().flows.cols();
  for (const auto& d : days) {
    if (d.flows.rows() != n || d.flows.cols() != m) {
      throw ShapeError("observed day " + d.date.str() + " has a different market shape");
    }
  }
}

EquilibriumResult solve_day(const Market& market, const ObservedDay& day, SolveOptions opts) {
  try {
    return solve_equilibrium(market, opts);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError("day " + day.date.str() + ": " + e.what(), e.last_gap());
  }
}

std::vector<Param> theta_params(int m) {
  std::vector<Param> out{Param::weight_q(), Param::weight_d()};
  for (int j = 0; j < m; ++j) out.push_back(Param::bias(j));
  return out;
}

// theta <-> (w_q, w_d, b_0 .. b_{m-1})
Eigen::VectorXd pack(const PreferenceParams& t, int m) {
  Eigen::VectorXd x(2 + m);
  x[0] = t.w_q;
  x[1] = t.w_d;
  for (int j = 0; j < m; ++j) x[2 + j] = t.biases.empty() ? 0.0 : t.biases.at(j);
  return x;
}

PreferenceParams unpack(const Eigen::VectorXd& x) {
  PreferenceParams t;
  t.w_q = x[0];
  t.w_d = x[1];
  t.biases.assign(x.data() + 2, x.data() + x.size());
  return t;
}

// Loss, gradient and (optionally) stacked flow Jacobian at one theta. Keeps
// the last flows per day to warm-start the next solves.
class Objective {
 public:
  Objective(std::span<const ObservedDay> days, const SolveOptions& solve)
      : days_(days), solve_(solve), warm_(days.size()) {}

  double loss(const Eigen::VectorXd& x) {
    const PreferenceParams theta = unpack(x);
    double total = 0.0;
    for (std::size_t t = 0; t < days_.size(); ++t) {
      const auto r = solve_at(theta, t);
      total += (r.flow - days_[t].flows).squaredNorm();
    }
    if (!std::isfinite(total)) throw NumericalError("calibration loss is not finite");
    return total;
  }

  // Fills the gradient and, when requested, J'J for Gauss-Newton.
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd* jtj) {
    const PreferenceParams theta = unpack(x);
    const int m = static_cast<int>(days_.front().flows.cols());
    const auto params = theta_params(m);
    grad = Eigen::VectorXd::Zero(x.size());
    if (jtj) *jtj = Eigen::MatrixXd::Zero(x.size(), x.size());
    double total = 0.0;
    SensitivityOptions sens;
    sens.allow_degenerate = true;
    for (std::size_t t = 0; t < days_.size(); ++t) {
      const Market market = market_for_day(days_[t], theta);
      const auto r = solve_at(theta, t, &market);
      const Eigen::MatrixXd resid = r.flow - days_[t].flows;
      total += resid.squaredNorm();
      const KktSystem kkt(r, market, sens);
      grad += kkt.gradient(2.0 * resid, params);
      if (jtj) {
        Eigen::MatrixXd cols(resid.size(), x.size());
        for (std::size_t k = 0; k < params.size(); ++k) {
          const Eigen::MatrixXd d = kkt.d_flow(params[k]);
          cols.col(static_cast<Eigen::Index>(k)) = d.reshaped();
        }
        *jtj += cols.transpose() * cols;
      }
    }
    if (!std::isfinite(total) || !grad.allFinite()) {
      throw NumericalError("calibration loss or gradient is not finite");
    }
    return total;
  }

 private:
  EquilibriumResult solve_at(const PreferenceParams& theta, std::size_t t,
                             const Market* given = nullptr) {
    const Market market = given ? *given : market_for_day(days_[t], theta);
    SolveOptions opts = solve_;
    if (warm_[t].size() > 0) opts.initial = warm_[t];
    auto r = solve_day(market, days_[t], opts);
    warm_[t] = r.flow;
    return r;
  }

  std::span<const ObservedDay> days_;
  SolveOptions solve_;
  std::vector<FlowMatrix> warm_;
};

Date next_day(Date d) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
  const int len = d.month == 2 && leap ? 29 : kDays[d.month - 1];
  if (++d.day > len) {
    d.day = 1;
    if (++d.month > 12) {
      d.month = 1;
      ++d.year;
    }
  }
  return d;
}

}  // namespace

BiasInit init_biases(std::span<const ObservedDay> days) {
  check_days(days);
  const int n = static_cast<int>(days.front().flows.rows());
  const int m = static_cast<int>(days.front().flows.cols());

  struct Row {
    int lambda;
    int provider;
    double mprime;
    bool used;
  };
  std::vector<Row> rows;
  int n_lambda = 0;
  for (const auto& day : days) {
    const Eigen::VectorXd load = day.flows.colwise().sum().transpose();
    for (int i = 0; i < n; ++i) {
      const double demand = day.demands[i];
      if (demand <= 0.0) continue;
      const int lam = n_lambda++;
      for (int j = 0; j < m; ++j) {
        const double mp = day.prices[j] + day.delays(i, j) +
                          (load[j] + day.flows(i, j)) / day.capacities[j];
        rows.push_back({lam, j, mp, day.flows(i, j) > kUsedRouteFraction * demand});
      }
    }
  }
  int n_eq = 0;
  for (const auto& r : rows) n_eq += r.used ? 1 : 0;
  const int n_ub = static_cast<int>(rows.size()) - n_eq;

  // Variables: b (m), lambda (n_lambda, free), then slack pairs when relaxed.
  auto build = [&](bool relaxed) {
    const int n_var = m + n_lambda + (relaxed ? 2 * n_eq : 0);
    LinearProgram lp;
    lp.cost = Eigen::VectorXd::Zero(n_var);
    lp.cost.head(m).setOnes();
    if (relaxed) lp.cost.tail(2 * n_eq).setConstant(1e3);
    lp.free.assign(n_var, false);
    for (int k = 0; k < n_lambda; ++k) lp.free[m + k] = true;
    lp.a_eq = Eigen::MatrixXd::Zero(n_eq, n_var);
    lp.b_eq.resize(n_eq);
    lp.a_ub = Eigen::MatrixXd::Zero(n_ub, n_var);
    lp.b_ub.resize(n_ub);
    int e = 0, u = 0;
    for (const auto& r : rows) {
      if (r.used) {
        // b_j + lambda + s+ - s- = M'
        lp.a_eq(e, r.provider) = 1.0;
        lp.a_eq(e, m + r.lambda) = 1.0;
        if (relaxed) {
          lp.a_eq(e, m + n_lambda + 2 * e) = 1.0;
          lp.a_eq(e, m + n_lambda + 2 * e + 1) = -1.0;
        }
        lp.b_eq[e++] = r.mprime;
      } else {
        lp.a_ub(u, r.provider) = 1.0;
        lp.a_ub(u, m + r.lambda) = 1.0;
        lp.b_ub[u++] = r.mprime;
      }
    }
    return lp;
  };

  BiasInit out;
  LpSolution sol = solve_lp(build(false));
  if (sol.status == LpStatus::kInfeasible) {
    out.relaxed = true;
    sol = solve_lp(build(true));
  }
  if (sol.status == LpStatus::kUnbounded) throw InternalError("bias program is unbounded");
  if (sol.status != LpStatus::kOptimal) throw InternalError("bias program has no solution");
  out.biases = sol.x.head(m).cwiseMax(0.0);
  out.objective = out.biases.sum();
  if (out.relaxed) out.total_slack = sol.x.tail(2 * n_eq).sum();
  return out;
}

double calibration_loss(const PreferenceParams& theta, std::span<const ObservedDay> days,
                        const SolveOptions& solve) {
  check_days(days);
  Objective obj(days, solve);
  return obj.loss(pack(theta, static_cast<int>(days.front().flows.cols())));
}

CalibrationReport fit_theta(std::span<const ObservedDay> days, const PreferenceParams& init,
                            const FitOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  check_days(days);
  const int m = static_cast<int>(days.front().flows.cols());
  if (!(init.w_q > 0.0)) throw ArgumentError("fit_theta: initial w_q must be positive");
  if (!init.biases.empty() && static_cast<int>(init.biases.size()) != m) {
    throw ShapeError("fit_theta: initial biases do not match the number of providers");
  }

  auto project = [&](Eigen::VectorXd x) {
    x[0] = std::max(x[0], opts.w_q_floor);
    x.tail(x.size() - 1) = x.tail(x.size() - 1).cwiseMax(0.0);
    return x;
  };

  Objective obj(days, opts.solve);
  Eigen::VectorXd x = project(pack(init, m));
  CalibrationReport report;
  Eigen::VectorXd grad;
  Eigen::MatrixXd jtj;
  const bool gauss_newton = opts.direction == Direction::kGaussNewton;
  double loss = obj.evaluate(x, grad, gauss_newton ? &jtj : nullptr);
  report.loss_trace.push_back(loss);
  double damping = 1e-3;
  double data_scale = 0.0;
  for (const auto& d : days) data_scale += d.flows.squaredNorm();

  for (int it = 0; it < opts.max_iters; ++it) {
    if (loss == 0.0 || grad.cwiseAbs().maxCoeff() == 0.0) {
      report.converged = true;
      break;
    }
    Eigen::VectorXd dir = -grad;
    double step = opts.initial_step;
    if (gauss_newton) {
      // Coordinates on their bound with the gradient pushing outward stay
      // fixed; the damped system is solved over the rest.
      std::vector<int> free;
      for (int k = 0; k < x.size(); ++k) {
        const double lower = k == 0 ? opts.w_q_floor : 0.0;
        if (!(x[k] <= lower && grad[k] > 0.0)) free.push_back(k);
      }
      const int nf = static_cast<int>(free.size());
      Eigen::MatrixXd lhs(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (int a = 0; a < nf; ++a) {
        rhs[a] = -0.5 * grad[free[a]];
        for (int b = 0; b < nf; ++b) lhs(a, b) = jtj(free[a], free[b]);
        lhs(a, a) += damping * (1.0 + jtj(free[a], free[a]));
      }
      const Eigen::VectorXd sub = lhs.ldlt().solve(rhs);
      dir.setZero();
      for (int a = 0; a < nf; ++a) dir[free[a]] = sub[a];
      step = 1.0;
    }
    bool accepted = false;
    Eigen::VectorXd x_new;
    double loss_new = loss;
    for (int h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
      x_new = project(x + step * dir);
      const double decrease = grad.dot(x_new - x);
      if (decrease >= 0.0) continue;
      loss_new = obj.loss(x_new);
      if (loss_new <= loss + opts.armijo * decrease) {
        accepted = true;
        break;
      }
    }
    if (gauss_newton) damping = accepted && step == 1.0 ? std::max(damping * 0.3, 1e-9) : damping * 10.0;
    if (!accepted && gauss_newton && damping <= kMaxDamping) continue;
    if (!accepted) {
      // Line search exhausted. Only a loss at rounding level counts as converged.
      report.converged = loss <= 1e-12 * data_scale;
      break;
    }
    x = x_new;
    loss = obj.evaluate(x, grad, gauss_newton ? &jtj : nullptr);
    report.loss_trace.push_back(loss);
    report.iterations = it + 1;
    const auto k = report.loss_trace.size();
    if (k > static_cast<std::size_t>(opts.window)) {
      const double before = report.loss_trace[k - 1 - opts.window];
      if ((before - loss) <= opts.rel_tol * before) {
        report.converged = true;
        break;
      }
    }
  }

  report.theta = unpack(x);
  const FlowFit fit = flow_fit(report.theta, days, opts.solve);
  report.r2 = fit.r2;
  report.mae = fit.mae;
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

FlowMatrix predict_flows(const PreferenceParams& theta, const ObservedDay& day,
                         const SolveOptions& solve) {
  return solve_day(market_for_day(day, theta), day, solve).flow;
}

FlowFit flow_fit(const PreferenceParams& theta, std::span<const ObservedDay> days,
                 const SolveOptions& solve) {
  check_days(days);
  double sum = 0.0, count = 0.0;
  for (const auto& d : days) {
    sum += d.flows.sum();
    count += static_cast<double>(d.flows.size());
  }
  const double mean = sum / count;
  double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
  for (const auto& d : days) {
    const FlowMatrix pred = predict_flows(theta, d, solve);
    ss_res += (pred - d.flows).squaredNorm();
    ss_tot += (d.flows.array() - mean).square().sum();
    abs_err += (pred - d.flows).cwiseAbs().sum();
  }
  FlowFit out;
  out.loss = ss_res;
  out.mae = abs_err / count;
  out.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return out;
}

std::vector<ObservedDay> simulate_days(const Market& market, int count, std::uint64_t seed,
                                       double price_jitter, double demand_jitter,
                                       const SolveOptions& solve) {
  if (count < 1) throw ArgumentError("simulate_days: count must be >= 1");
  if (price_jitter < 0.0 || price_jitter >= 1.0 || demand_jitter < 0.0 || demand_jitter >= 1.0) {
    throw ArgumentError("simulate_days: jitter must lie in [0, 1)");
  }
  Rng rng(mix_seed(seed, 0xda75));
  std::vector<ObservedDay> out;
  Date date{2025, 1, 1};
  for (int t = 0; t < count; ++t, date = next_day(date)) {
    Eigen::VectorXd prices = market.prices();
    for (auto& p : prices) p *= 1.0 + rng.uniform(-price_jitter, price_jitter);
    prices[market.target_index()] = std::min(prices[market.target_index()], market.price_cap());
    Eigen::VectorXd demands = market.demands();
    for (auto& d : demands) d *= 1.0 + rng.uniform(-demand_jitter, demand_jitter);
    const Market day_market = market.with_prices(prices).with_demands(demands);
    out.push_back(observe(day_market, solve_equilibrium(day_market, solve).flow, date));
  }
  return out;
}

}  // namespace llmprice
