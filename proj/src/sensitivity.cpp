#include "llmprice/sensitivity.hpp"

#include <cmath>
#include <sstream>

#include "llmprice/errors.hpp"

namespace llmprice {

std::string Param::name() const {
  switch (kind) {
    case Kind::kWeightQ: return "w_q";
    case Kind::kWeightD: return "w_d";
    case Kind::kBias: return "b[" + std::to_string(provider) + "]";
    case Kind::kPrice: return "p[" + std::to_string(provider) + "]";
    case Kind::kCapacity: return "alpha[" + std::to_string(provider) + "]";
    case Kind::kLogCapacity: return "log_alpha[" + std::to_string(provider) + "]";
    case Kind::kDelay: return "d[" + std::to_string(user) + "," + std::to_string(provider) + "]";
  }
  return "?";
}

namespace {

void check_param(const Market& market, const Param& p) {
  using K = Param::Kind;
  const bool needs_provider = p.kind != K::kWeightQ && p.kind != K::kWeightD;
  if (needs_provider && (p.provider < 0 || p.provider >= market.n_providers())) {
    throw ArgumentError("parameter " + p.name() + ": provider index out of range");
  }
  if (p.kind == K::kDelay && (p.user < 0 || p.user >= market.n_users())) {
    throw ArgumentError("parameter " + p.name() + ": user index out of range");
  }
}

}  // namespace

double value_of(const Market& market, const Param& p) {
  check_param(market, p);
  using K = Param::Kind;
  switch (p.kind) {
    case K::kWeightQ: return market.params().w_q;
    case K::kWeightD: return market.params().w_d;
    case K::kBias: return market.biases()[p.provider];
    case K::kPrice: return market.prices()[p.provider];
    case K::kCapacity: return market.capacities()[p.provider];
    case K::kLogCapacity: return std::log(market.capacities()[p.provider]);
    case K::kDelay: return market.delays()(p.user, p.provider);
  }
  return 0.0;
}

Market perturb(const Market& market, const Param& p, double delta) {
  check_param(market, p);
  using K = Param::Kind;
  auto providers = market.providers();
  auto users = market.users();
  PreferenceParams params = market.params();
  params.biases.clear();
  switch (p.kind) {
    case K::kWeightQ: params.w_q += delta; break;
    case K::kWeightD: params.w_d += delta; break;
    case K::kBias: providers[p.provider].perceived_value += delta; break;
    case K::kPrice: providers[p.provider].price += delta; break;
    case K::kCapacity: providers[p.provider].capacity += delta; break;
    case K::kLogCapacity: providers[p.provider].capacity *= std::exp(delta); break;
    case K::kDelay: users[p.user].delays[p.provider] += delta; break;
  }
  double cap = std::max(market.price_cap(), providers.back().price);
  return Market(std::move(providers), std::move(users), std::move(params), cap);
}

KktSystem::KktSystem(const EquilibriumResult& result, const Market& market,
                     const SensitivityOptions& options)
    : market_(market), flow_(result.flow) {
  const int n = market.n_users();
  const int m = market.n_providers();
  if (flow_.rows() != n || flow_.cols() != m) throw ShapeError("equilibrium does not match market");
  const double wq = market.params().w_q;
  if (!(wq > 0.0)) throw DegenerateError("sensitivity requires w_q > 0");
  load_ = flow_.colwise().sum().transpose();

  const Eigen::MatrixXd mc = marginal_costs(flow_, market);
  active_ = ActiveMask::Constant(n, m, false);
  std::vector<int> user_row(n, -1);
  for (int i = 0; i < n; ++i) {
    const double d = market.demands()[i];
    if (d <= 0.0) continue;
    const double floor = kUsedRouteFraction * d;
    const double lambda = result.user_multipliers.size() == n ? result.user_multipliers[i]
                                                              : mc.row(i).minCoeff();
    for (int j = 0; j < m; ++j) {
      if (flow_(i, j) > floor) {
        active_(i, j) = true;
        coords_.emplace_back(i, j);
        if (flow_(i, j) <= options.complementarity_margin * std::max(1.0, d)) degenerate_ = true;
      } else if (mc(i, j) - lambda <= options.complementarity_margin) {
        degenerate_ = true;
      }
    }
    user_row[i] = rows_++;
  }
  if (degenerate_ && !options.allow_degenerate) {
    throw BoundaryPointError(
        "equilibrium violates strict complementarity; only one-sided derivatives exist "
        "(set allow_degenerate to use the active-set sub-gradient)");
  }

  const int k = static_cast<int>(coords_.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + rows_, k + rows_);
  for (int a = 0; a < k; ++a) {
    const auto [ia, ja] = coords_[a];
    const double s = wq / market.capacities()[ja];
    for (int b = 0; b < k; ++b) {
      const auto [ib, jb] = coords_[b];
      if (ja == jb) kkt(a, b) = ia == ib ? 2.0 * s : s;
    }
    const int r = k + user_row[ia];
    kkt(a, r) = 1.0;
    kkt(r, a) = 1.0;
  }
  lu_.compute(kkt);
  if (!lu_.isInvertible()) throw DegenerateError("bordered KKT system is singular");
}

Eigen::VectorXd KktSystem::rhs(const Param& p) const {
  const Market& market = market_;
  check_param(market, p);
  using K = Param::Kind;
  const auto& w = market.params();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(coords_.size()) + rows_);
  for (std::size_t a = 0; a < coords_.size(); ++a) {
    const auto [i, j] = coords_[a];
    const double alpha = market.capacities()[j];
    double v = 0.0;
    switch (p.kind) {
      case K::kWeightQ: v = (load_[j] + flow_(i, j)) / alpha; break;
      case K::kWeightD: v = market.delays()(i, j); break;
      case K::kBias: v = j == p.provider ? -1.0 : 0.0; break;
      case K::kPrice: v = j == p.provider ? w.w_p : 0.0; break;
      case K::kCapacity:
        v = j == p.provider ? -w.w_q * (load_[j] + flow_(i, j)) / (alpha * alpha) : 0.0;
        break;
      case K::kLogCapacity:
        v = j == p.provider ? -w.w_q * (load_[j] + flow_(i, j)) / alpha : 0.0;
        break;
      case K::kDelay: v = (i == p.user && j == p.provider) ? w.w_d : 0.0; break;
    }
    g[static_cast<Eigen::Index>(a)] = v;
  }
  return g;
}

Eigen::MatrixXd KktSystem::d_flow(const Param& p) const {
  const Eigen::VectorXd sol = lu_.solve(-rhs(p));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(flow_.rows(), flow_.cols());
  for (std::size_t a = 0; a < coords_.size(); ++a) {
    out(coords_[a].first, coords_[a].second) = sol[static_cast<Eigen::Index>(a)];
  }
  return out;
}

Eigen::VectorXd KktSystem::gradient(const Eigen::MatrixXd& loss_grad_flow,
                                    std::span<const Param> wrt) const {
  if (loss_grad_flow.rows() != flow_.rows() || loss_grad_flow.cols() != flow_.cols()) {
    throw ShapeError("loss gradient shape does not match the flow");
  }
  Eigen::VectorXd seed = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(coords_.size()) + rows_);
  for (std::size_t a = 0; a < coords_.size(); ++a) {
    seed[static_cast<Eigen::Index>(a)] = loss_grad_flow(coords_[a].first, coords_[a].second);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(wrt.size()));
  if (seed.isZero(0.0)) return out;
  // The bordered matrix is symmetric, so the adjoint solve reuses the factors.
  const Eigen::VectorXd adjoint = lu_.solve(seed);
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = -adjoint.dot(rhs(wrt[k]));
  }
  return out;
}

EquilibriumJacobian equilibrium_jacobian(const EquilibriumResult& result, const Market& market,
                                         const Param& wrt, const SensitivityOptions& options) {
  const KktSystem kkt(result, market, options);
  return EquilibriumJacobian{wrt, kkt.d_flow(wrt), kkt.active_set(), kkt.degenerate()};
}

LossGradient loss_gradient(const Eigen::MatrixXd& loss_grad_flow, const EquilibriumResult& result,
                           const Market& market, std::span<const Param> wrt) {
  SensitivityOptions opts;
  opts.allow_degenerate = true;
  const KktSystem kkt(result, market, opts);
  return LossGradient{kkt.gradient(loss_grad_flow, wrt), kkt.degenerate()};
}

}  // namespace llmprice
