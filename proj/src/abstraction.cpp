#include "llmprice/abstraction.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "llmprice/errors.hpp"
#include "llmprice/sensitivity.hpp"

namespace llmprice {

namespace {

using Clock = std::chrono::steady_clock;

void check_k(const Market& market, int k) {
  if (k < 1 || k > market.n_rivals()) {
    throw ArgumentError("K = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(market.n_rivals()) + "]");
  }
}

void check_scores(const Market& market, const RivalScores& s) {
  const int r = market.n_rivals();
  if (s.sum_scores.size() != r || s.avg_scores.size() != r) {
    throw ShapeError("scores must have one entry per rival");
  }
  if (!s.sum_scores.allFinite() || !s.avg_scores.allFinite() || (s.sum_scores.array() < 0.0).any() ||
      (s.avg_scores.array() < 0.0).any()) {
    throw ArgumentError("scores must be finite and nonnegative");
  }
}

Market rebuild(const Market& market, std::vector<Provider> providers, std::vector<UserGroup> users) {
  PreferenceParams params = market.params();
  params.biases.clear();
  return Market(std::move(providers), std::move(users), std::move(params), market.price_cap());
}

double ymax_of(std::span<const double> y) {
  double out = 0.0;
  for (double v : y) out = std::max(out, std::abs(v));
  return out;
}

std::vector<int> split_indices(std::size_t total, double fraction, std::uint64_t seed,
                               std::vector<int>& val) {
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (total == 1) {
    val = idx;
    return idx;
  }
  Rng rng(mix_seed(seed, 0x5917));
  for (std::size_t i = total - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(total)));
  n_val = std::clamp<std::size_t>(n_val, 1, total - 1);
  val.assign(idx.begin(), idx.begin() + static_cast<long>(n_val));
  std::vector<int> train(idx.begin() + static_cast<long>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return train;
}

}  // namespace

AbstractedMarket aggregate(const Market& market, const RivalScores& scores, int k) {
  check_k(market, k);
  check_scores(market, scores);
  const int r = market.n_rivals();
  AbstractedMarket out{market, {}, {}, scores, false};
  if (k == r) {
    out.identity = true;
    out.kept_indices.resize(r);
    std::iota(out.kept_indices.begin(), out.kept_indices.end(), 0);
    return out;
  }
  std::vector<int> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores.avg_scores[a] > scores.avg_scores[b]; });
  out.kept_indices.assign(order.begin(), order.begin() + (k - 1));
  out.aggregated.assign(order.begin() + (k - 1), order.end());
  std::sort(out.kept_indices.begin(), out.kept_indices.end());
  std::sort(out.aggregated.begin(), out.aggregated.end());

  double weight = 0.0, alpha = 0.0, price = 0.0, bias = 0.0;
  Eigen::VectorXd delay = Eigen::VectorXd::Zero(market.n_users());
  for (int j : out.aggregated) {
    const double w = scores.avg_scores[j];
    weight += w;
    alpha += scores.sum_scores[j] * market.capacities()[j];
    price += w * market.prices()[j];
    bias += w * market.biases()[j];
    delay += w * market.delays().col(j);
  }
  if (!(weight > 0.0)) throw DegenerateError("avg scores over the aggregated rivals sum to zero");
  if (!(alpha > 0.0)) throw DegenerateError("aggregate capacity is zero");

  std::vector<Provider> providers;
  for (int j : out.kept_indices) providers.push_back(market.providers()[j]);
  providers.push_back(Provider{"aggregate", price / weight, alpha, bias / weight, false});
  providers.push_back(market.target());
  std::vector<UserGroup> users = market.users();
  for (int i = 0; i < market.n_users(); ++i) {
    auto& d = users[i].delays;
    std::vector<double> nd;
    for (int j : out.kept_indices) nd.push_back(d[j]);
    nd.push_back(delay[i] / weight);
    nd.push_back(d[market.target_index()]);
    d = std::move(nd);
  }
  out.market = rebuild(market, std::move(providers), std::move(users));
  return out;
}

RivalScores heuristic_scores(const Market& market, Heuristic kind, int k) {
  check_k(market, k);
  const int r = market.n_rivals();
  RivalScores s{Eigen::VectorXd::Ones(r), Eigen::VectorXd::Ones(r)};
  if (kind == Heuristic::kMin) {
    std::vector<int> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return market.prices()[a] < market.prices()[b]; });
    for (int rank = 0; rank < r; ++rank) s.avg_scores[order[rank]] = 1.0 / (1.0 + rank);
  }
  return s;
}

Market avg_abstraction(const Market& market, int k) {
  check_k(market, k);
  const int r = market.n_rivals();
  const double alpha = market.capacities().head(r).sum();
  const double price = market.prices().head(r).mean();
  const double bias = market.biases().head(r).mean();
  std::vector<Provider> providers;
  for (int c = 0; c < k; ++c) {
    providers.push_back(Provider{"mean_rival_" + std::to_string(c), price, alpha / k, bias, false});
  }
  providers.push_back(market.target());
  std::vector<UserGroup> users = market.users();
  for (int i = 0; i < market.n_users(); ++i) {
    const double d = market.delays().row(i).head(r).mean();
    std::vector<double> nd(k, d);
    nd.push_back(market.delays()(i, market.target_index()));
    users[i].delays = std::move(nd);
  }
  return rebuild(market, std::move(providers), std::move(users));
}

std::vector<double> profit_values(const Market& market, std::span<const double> prices,
                                  const SolveOptions& solve) {
  std::vector<double> y;
  y.reserve(prices.size());
  for (double p : prices) y.push_back(profit(p, market, solve).profit);
  return y;
}

double curve_loss(const Market& original, const Market& abstracted, std::span<const double> prices,
                  const SolveOptions& solve) {
  if (prices.size() < 2) throw ArgumentError("curve loss needs at least two price samples");
  const auto y = profit_values(original, prices, solve);
  const double ymax = ymax_of(y);
  if (ymax == 0.0) return 0.0;
  const auto yhat = profit_values(abstracted, prices, solve);
  double total = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) total += std::pow((y[k] - yhat[k]) / ymax, 2);
  return total / static_cast<double>(y.size());
}

double curve_loss(const ScorerModel& scorer, const Market& market, int k,
                  std::span<const double> prices, const SolveOptions& solve) {
  const auto abs = aggregate(market, score_rivals(scorer, market), k);
  if (abs.identity) {
    if (prices.size() < 2) throw ArgumentError("curve loss needs at least two price samples");
    return 0.0;
  }
  return curve_loss(market, abs.market, prices, solve);
}

CurveLossGrad curve_loss_gradient(const ScorerModel& scorer, const Market& market, int k,
                                  std::span<const double> prices, std::span<const double> y,
                                  const SolveOptions& solve) {
  if (prices.size() < 2 || prices.size() != y.size()) {
    throw ArgumentError("curve loss needs matching price samples and profits (at least two)");
  }
  CurveLossGrad out;
  out.grad = Eigen::VectorXd::Zero(scorer.param_count());
  out.samples = static_cast<int>(prices.size());
  ScorerTape tape;
  const RivalScores scores = score_features(scorer, rival_features(market), &tape);
  const auto abs = aggregate(market, scores, k);
  const double ymax = ymax_of(y);
  if (abs.identity || ymax == 0.0) return out;

  const Market& am = abs.market;
  const int a = static_cast<int>(abs.kept_indices.size());  // aggregate column
  const int s = am.target_index();
  const int n = am.n_users();
  std::vector<Param> wrt{Param::capacity(a), Param::price(a), Param::bias(a)};
  for (int i = 0; i < n; ++i) wrt.push_back(Param::delay(i, a));
  Eigen::VectorXd d_attr = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(wrt.size()));
  const double scale = static_cast<double>(prices.size());
  for (std::size_t k2 = 0; k2 < prices.size(); ++k2) {
    const Market mk = am.with_target_price(prices[k2]);
    const auto r = solve_equilibrium(mk, solve);
    const double yhat = prices[k2] * r.flow.col(s).sum();
    const double e = (y[k2] - yhat) / ymax;
    out.loss += e * e / scale;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(r.flow.rows(), r.flow.cols());
    g.col(s).setConstant(-2.0 * e / (scale * ymax) * prices[k2]);
    const auto lg = loss_gradient(g, r, mk, wrt);
    if (lg.subgradient) ++out.degenerate;
    d_attr += lg.gradient;
  }

  // Through the aggregation formulas into the scores.
  const int rivals = market.n_rivals();
  Eigen::VectorXd d_sum = Eigen::VectorXd::Zero(rivals), d_avg = Eigen::VectorXd::Zero(rivals);
  double weight = 0.0;
  for (int j : abs.aggregated) weight += scores.avg_scores[j];
  const double pa = am.prices()[a], ba = am.biases()[a];
  for (int j : abs.aggregated) {
    d_sum[j] = d_attr[0] * market.capacities()[j];
    double v = d_attr[1] * (market.prices()[j] - pa) + d_attr[2] * (market.biases()[j] - ba);
    for (int i = 0; i < n; ++i) v += d_attr[3 + i] * (market.delays()(i, j) - am.delays()(i, a));
    d_avg[j] = v / weight;
  }
  out.grad = scorer_backward(scorer, tape, d_sum, d_avg);
  return out;
}

std::vector<double> price_samples(double cap, int count, Rng* rng) {
  if (count < 2) throw ArgumentError("need at least two price samples");
  std::vector<double> out(count);
  for (int k = 0; k < count; ++k) {
    out[k] = rng ? cap * (k + rng->uniform()) / count : cap * k / (count - 1);
  }
  out.back() = rng ? out.back() : cap;
  return out;
}

TrainResult train_scorer(std::span<const Market> scenarios, int k, const TrainOptions& opts) {
  const auto t0 = Clock::now();
  if (scenarios.empty()) throw ArgumentError("train_scorer: no scenarios");
  if (opts.batch < 1 || opts.epochs < 0 || opts.price_samples < 2) {
    throw ArgumentError("train_scorer: batch >= 1, epochs >= 0 and price_samples >= 2 required");
  }
  bool all_identity = true;
  for (const auto& m : scenarios) {
    check_k(m, k);
    all_identity = all_identity && k == m.n_rivals();
  }
  TrainResult out{opts.initial ? *opts.initial : ScorerModel::init(opts.seed, opts.width), {}};
  if (out.model.schema_hash != feature_schema_hash()) {
    throw SchemaError("initial scorer was built for another feature schema");
  }
  TrainReport& rep = out.report;
  std::vector<int> val_idx;
  const std::vector<int> train_idx = split_indices(scenarios.size(), opts.validation_fraction,
                                                   opts.seed, val_idx);
  if (train_idx.empty() || val_idx.empty()) throw ArgumentError("train_scorer: empty split");
  if (all_identity) {
    rep.identity = true;
    rep.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
    return out;
  }

  // Validation curves on a fixed grid, computed once.
  std::vector<std::vector<double>> val_prices, val_y;
  for (int v : val_idx) {
    val_prices.push_back(price_samples(scenarios[v].price_cap(), opts.price_samples));
    val_y.push_back(profit_values(scenarios[v], val_prices.back()));
  }
  auto validate = [&](const ScorerModel& model) {
    double total = 0.0;
    for (std::size_t q = 0; q < val_idx.size(); ++q) {
      total += curve_loss_gradient(model, scenarios[val_idx[q]], k, val_prices[q], val_y[q]).loss;
    }
    return total / static_cast<double>(val_idx.size());
  };

  for (std::size_t q = 0; q < val_idx.size(); ++q) {
    const Market& m = scenarios[val_idx[q]];
    const double ymax = ymax_of(val_y[q]);
    if (ymax == 0.0 || k == m.n_rivals()) continue;
    const auto yhat = profit_values(avg_abstraction(m, k), val_prices[q]);
    double l = 0.0;
    for (std::size_t i = 0; i < yhat.size(); ++i) l += std::pow((val_y[q][i] - yhat[i]) / ymax, 2);
    rep.avg_baseline_val_loss += l / static_cast<double>(yhat.size()) / static_cast<double>(val_idx.size());
  }

  ScorerModel model = out.model;
  rep.initial_val_loss = rep.best_val_loss = validate(model);
  Eigen::VectorXd theta = model.flat();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size()), m2 = m1;
  const double beta1 = 0.9, beta2 = 0.999;
  int adam_t = 0;
  int since_best = 0;
  Rng rng(mix_seed(opts.seed, 0x7a19));
  std::vector<int> order = train_idx;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch));
      const double bsize = static_cast<double>(end - start);
      std::vector<std::vector<double>> prices, ys;
      for (std::size_t q = start; q < end; ++q) {
        const Market& m = scenarios[order[q]];
        prices.push_back(price_samples(m.price_cap(), opts.price_samples, &rng));
        ys.push_back(profit_values(m, prices.back()));
      }
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      double loss = 0.0;
      int samples = 0, degenerate = 0;
      for (std::size_t q = start; q < end; ++q) {
        const auto g = curve_loss_gradient(model, scenarios[order[q]], k, prices[q - start],
                                           ys[q - start]);
        loss += g.loss / bsize;
        grad += g.grad / bsize;
        samples += g.samples;
        degenerate += g.degenerate;
      }
      if (degenerate > opts.spsa_threshold * samples) {
        // Too many kinks for the implicit gradient; estimate it by SPSA.
        ++rep.spsa_batches;
        Eigen::VectorXd delta(theta.size());
        for (auto& d : delta) d = rng.sign();
        auto batch_loss = [&](const Eigen::VectorXd& th) {
          ScorerModel probe = model;
          probe.set_flat(th);
          double total = 0.0;
          for (std::size_t q = start; q < end; ++q) {
            total += curve_loss_gradient(probe, scenarios[order[q]], k, prices[q - start],
                                         ys[q - start]).loss / bsize;
          }
          return total;
        };
        const double c = opts.spsa_perturbation;
        const double diff = batch_loss(theta + c * delta) - batch_loss(theta - c * delta);
        grad = diff / (2.0 * c) * delta;
      }
      epoch_loss += loss * bsize / static_cast<double>(order.size());
      ++adam_t;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
      const Eigen::VectorXd mhat = m1 / (1.0 - std::pow(beta1, adam_t));
      const Eigen::VectorXd vhat = m2 / (1.0 - std::pow(beta2, adam_t));
      theta -= opts.learning_rate * mhat.cwiseQuotient((vhat.array().sqrt() + 1e-8).matrix());
      model.set_flat(theta);
    }
    rep.train_loss.push_back(epoch_loss);
    const double vl = validate(model);
    rep.val_loss.push_back(vl);
    rep.epochs_run = epoch + 1;
    if (vl < rep.best_val_loss) {
      rep.best_val_loss = vl;
      rep.best_epoch = epoch;
      out.model = model;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      rep.early_stopped = true;
      break;
    }
  }
  rep.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

PricingResult price_on_abstraction(const Market& original, const Market& abstracted,
                                   bool with_oracle, const SweepOptions& sweep) {
  const auto t0 = Clock::now();
  PricingResult inner = abstracted.n_users() * abstracted.n_providers() <= kExactMaxCells
                            ? optimize_price_exact(abstracted)
                            : optimize_price_sweep(abstracted, sweep);
  PricingResult r;
  r.method = "abstracted";
  r.curve = std::move(inner.curve);
  r.best_price = inner.best_price;
  r.solve_time = std::chrono::duration<double>(Clock::now() - t0).count();
  r.best_profit = profit(r.best_price, original).profit;
  if (with_oracle) {
    // The oracle is the best price known for the original market, so the
    // ratio never exceeds 1 even against a grid.
    const double best = std::max(optimize_price_oracle(original).best_profit, r.best_profit);
    r.oracle_ratio = best > 0.0 ? r.best_profit / best : 1.0;
  }
  return r;
}

PricingResult abstracted_pricing(const Market& market, const ScorerModel& scorer, int k,
                                 bool with_oracle, const SweepOptions& sweep) {
  const auto t0 = Clock::now();
  const auto abs = aggregate(market, score_rivals(scorer, market), k);
  const double scoring = std::chrono::duration<double>(Clock::now() - t0).count();
  PricingResult r = price_on_abstraction(market, abs.market, with_oracle, sweep);
  r.solve_time += scoring;
  return r;
}

}  // namespace llmprice
