#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>

#include "llmprice/abstraction.hpp"
#include "llmprice/calibration.hpp"
#include "llmprice/errors.hpp"
#include "llmprice/ingest.hpp"
#include "llmprice/pricing.hpp"
#include "llmprice/scenarios.hpp"
#include "llmprice/serialize.hpp"

namespace fs = std::filesystem;

namespace llmprice::cli {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> k;
  bool oracle = false;
  std::string scorer;
  std::string method;
  std::string direction;
};

// Config file with keys checked against what the command understands.
class Config {
 public:
  Config(const std::string& path, std::set<std::string> known) {
    if (!path.empty()) {
      doc_ = read_json_file(path);
      if (!doc_.is_object()) throw ConfigError(path + ": config must be a JSON object");
      base_ = fs::path(path).parent_path();
    } else {
      doc_ = nlohmann::json::object();
    }
    for (const auto& [key, value] : doc_.items()) {
      if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) const {
    if (!doc_.contains(key)) return fallback;
    try {
      return doc_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
  }

  // Paths are taken relative to the config file.
  std::string path(const std::string& key) const {
    const auto p = get<std::string>(key, "");
    if (p.empty()) return p;
    const fs::path fp(p);
    return fp.is_absolute() ? p : (base_ / fp).string();
  }

  const nlohmann::json& raw(const std::string& key) const { return doc_.at(key); }

 private:
  nlohmann::json doc_;
  fs::path base_;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

fs::path out_dir(const Flags& f) {
  fs::path dir(f.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw NotFoundError("cannot create output directory '" + f.out + "': " + ec.message());
  return dir;
}

std::uint64_t seed_of(const Flags& f, const Config& c) {
  return f.seed ? *f.seed : c.get<std::uint64_t>("seed", 0);
}

SuiteOptions suite_of(const Config& c) {
  SuiteOptions s;
  s.n_users = c.get("suite_users", s.n_users);
  s.m_providers = c.get("suite_providers", s.m_providers);
  s.price_cap = c.get("suite_price_cap", s.price_cap);
  return s;
}

Json pricing_to_json(const PricingResult& r) {
  Json j;
  j["format"] = "llmprice.pricing";
  j["version"] = 1;
  j["method"] = r.method;
  j["best_price"] = r.best_price;
  j["best_profit"] = r.best_profit;
  if (r.oracle_ratio) j["oracle_ratio"] = *r.oracle_ratio;
  j["solve_time"] = r.solve_time;
  Json curve = Json::array();
  for (const auto& s : r.curve) curve.push_back(Json::array({s.price, s.profit, s.load}));
  j["curve"] = std::move(curve);
  return j;
}

std::string curve_csv(const std::vector<CurveSample>& curve) {
  std::string out = "price,profit,load\n";
  for (const auto& s : curve) out += num(s.price) + "," + num(s.profit) + "," + num(s.load) + "\n";
  return out;
}

Json scenarios_to_json(const std::vector<Market>& markets) {
  Json j;
  j["format"] = "llmprice.scenarios";
  j["version"] = 1;
  Json list = Json::array();
  for (const auto& m : markets) list.push_back(market_to_json(m));
  j["markets"] = std::move(list);
  return j;
}

std::vector<Market> scenarios_from_file(const std::string& path) {
  const auto doc = read_json_file(path);
  if (!doc.is_object() || doc.value("format", "") != "llmprice.scenarios" || !doc.contains("markets")) {
    throw ConfigError(path + ": not a scenario file");
  }
  std::vector<Market> out;
  for (const auto& m : doc.at("markets")) out.push_back(market_from_json(m));
  if (out.empty()) throw ConfigError(path + ": no scenarios");
  return out;
}

// simulate: synthetic ground truth market, observed days and scenario sets
int cmd_simulate(const Flags& f, std::ostream& out) {
  const Config c(f.config, {"seed", "n_users", "m_providers", "days", "w_q", "w_d", "price_jitter",
                            "demand_jitter", "scenarios", "suite_users", "suite_providers",
                            "suite_price_cap"});
  const std::uint64_t seed = seed_of(f, c);
  SynthRanges ranges;
  ranges.w_q = c.get("w_q", 0.7);
  ranges.w_d = c.get("w_d", 1.3);
  const int n_days = c.get("days", 6);
  const int n_scen = c.get("scenarios", 0);
  if (n_scen < 0) throw ConfigError("scenarios must be >= 0");
  const SuiteOptions suite = suite_of(c);
  const Market truth = synth_market(seed, c.get("n_users", 3), c.get("m_providers", 4), ranges);
  const auto days = simulate_days(truth, n_days, seed, c.get("price_jitter", 0.3),
                                  c.get("demand_jitter", 0.2));
  const fs::path dir = out_dir(f);
  save_market((dir / "market.json").string(), truth);
  write_json_file((dir / "days.json").string(), days_to_json(days));
  out << "wrote market.json and " << days.size() << " observed days\n";
  if (n_scen > 0) {
    write_json_file((dir / "scenarios.json").string(),
                    scenarios_to_json(scenario_set(seed, n_scen, suite)));
    out << "wrote " << n_scen << " scenarios\n";
  }
  return kOk;
}

// calibrate: bias LP, then the flow-matching fit
int cmd_calibrate(const Flags& f, std::ostream& out) {
  const Config c(f.config, {"seed", "days", "market", "usage_csv", "performance_csv", "prices",
                            "target", "first", "last", "min_share_of_top_app", "holdout",
                            "max_iters", "direction", "tolerance", "max_rounds"});
  std::optional<Market> base;
  std::vector<ObservedDay> days;
  if (c.has("days")) {
    days = days_from_json(read_json_file(c.path("days")));
    if (c.has("market")) base = load_market(c.path("market"));
  } else if (c.has("usage_csv")) {
    for (const char* key : {"performance_csv", "prices", "target", "first", "last"}) {
      if (!c.has(key)) throw ConfigError(std::string("config key '") + key + "' is required with usage_csv");
    }
    const auto usage = load_usage_csv(c.path("usage_csv"));
    const auto perf = load_performance_csv(c.path("performance_csv"));
    MarketBuildOptions mo;
    mo.min_share_of_top_app = c.get("min_share_of_top_app", mo.min_share_of_top_app);
    auto built = build_market(usage, perf,
                              {Date::parse(c.get<std::string>("first", "")),
                               Date::parse(c.get<std::string>("last", ""))},
                              c.get<std::string>("target", ""),
                              c.get<std::map<std::string, double>>("prices", {}), mo);
    base = built.market;
    days = std::move(built.days);
  } else {
    throw ConfigError("calibrate needs 'days' or 'usage_csv' in the config");
  }
  if (days.empty()) throw ConfigError("no observed days");
  const int holdout = c.get("holdout", 0);
  if (holdout < 0 || holdout >= static_cast<int>(days.size())) {
    throw ConfigError("holdout must leave at least one training day");
  }
  FitOptions fo;
  fo.max_iters = c.get("max_iters", fo.max_iters);
  const std::string dir_name = !f.direction.empty() ? f.direction : c.get<std::string>("direction", "gauss_newton");
  if (dir_name == "gradient") fo.direction = Direction::kGradient;
  else if (dir_name == "gauss_newton") fo.direction = Direction::kGaussNewton;
  else throw ConfigError("direction must be 'gradient' or 'gauss_newton'");
  fo.solve.tolerance = c.get("tolerance", fo.solve.tolerance);
  fo.solve.max_rounds = c.get("max_rounds", fo.solve.max_rounds);

  const std::span<const ObservedDay> train(days.data(), days.size() - holdout);
  const std::span<const ObservedDay> held(days.data() + train.size(), holdout);
  const BiasInit bi = init_biases(train);
  PreferenceParams init{1.0, 1.0, 1.0, std::vector<double>(bi.biases.data(), bi.biases.data() + bi.biases.size())};
  const CalibrationReport rep = fit_theta(train, init, fo);

  Json j;
  j["format"] = "llmprice.calibration";
  j["version"] = 1;
  j["theta"] = params_to_json(rep.theta);
  j["bias_init"] = {{"biases", vector_to_json(bi.biases)},
                    {"objective", bi.objective},
                    {"total_slack", bi.total_slack},
                    {"relaxed", bi.relaxed}};
  j["direction"] = dir_name;
  j["converged"] = rep.converged;
  j["iterations"] = rep.iterations;
  j["final_loss"] = rep.loss_trace.back();
  j["r2"] = rep.r2;
  j["mae"] = rep.mae;
  if (holdout > 0) {
    const FlowFit hf = flow_fit(rep.theta, held, fo.solve);
    j["holdout"] = {{"days", holdout}, {"r2", hf.r2}, {"mae", hf.mae}, {"loss", hf.loss}};
  }
  j["loss_trace"] = rep.loss_trace;
  j["wall_time"] = rep.wall_time;

  const fs::path dir = out_dir(f);
  write_json_file((dir / "calibration.json").string(), j);
  std::string trace = "iteration,loss\n";
  for (std::size_t k = 0; k < rep.loss_trace.size(); ++k) trace += std::to_string(k) + "," + num(rep.loss_trace[k]) + "\n";
  write_text_file((dir / "loss_trace.csv").string(), trace);
  const Market fitted = base ? base->with_params(rep.theta) : market_for_day(days.back(), rep.theta);
  save_market((dir / "fitted_market.json").string(), fitted);

  out << "r2 " << num(rep.r2) << "\nmae " << num(rep.mae) << "\nfinal_loss " << num(rep.loss_trace.back())
      << "\nconverged " << (rep.converged ? "true" : "false") << "\n";
  return kOk;
}

// price: direct or abstracted optimisation of the target price
int cmd_price(const Flags& f, std::ostream& out) {
  const Config c(f.config, {"seed", "market", "method", "k", "scorer", "coarse_points", "refine_tol", "oracle"});
  if (!c.has("market")) throw ConfigError("price needs 'market' in the config");
  const Market market = load_market(c.path("market"));
  const std::string method = !f.method.empty() ? f.method : c.get<std::string>("method", "sweep");
  const bool oracle = f.oracle || c.get("oracle", false);
  SweepOptions so;
  so.coarse_points = c.get("coarse_points", so.coarse_points);
  so.refine_tol = c.get("refine_tol", so.refine_tol);

  PricingResult r;
  if (method == "sweep" || method == "exact") {
    r = method == "sweep" ? optimize_price_sweep(market, so) : optimize_price_exact(market);
    if (oracle) {
      const double best = std::max(optimize_price_oracle(market).best_profit, r.best_profit);
      r.oracle_ratio = best > 0.0 ? r.best_profit / best : 1.0;
    }
  } else if (method == "abstracted") {
    const std::string scorer_path = !f.scorer.empty() ? f.scorer : c.path("scorer");
    if (scorer_path.empty()) throw ArgumentError("abstracted pricing needs --scorer");
    const int k = f.k ? *f.k : c.get("k", 2);
    const ScorerModel model = load_scorer(scorer_path);
    r = abstracted_pricing(market, model, k, oracle, so);
  } else {
    throw ArgumentError("unknown method '" + method + "' (sweep, exact, abstracted)");
  }
  const fs::path dir = out_dir(f);
  write_json_file((dir / "pricing.json").string(), pricing_to_json(r));
  write_text_file((dir / "curve.csv").string(), curve_csv(r.curve));
  out << "best_price " << num(r.best_price) << "\nbest_profit " << num(r.best_profit) << "\n";
  if (r.oracle_ratio) out << "oracle_ratio " << num(*r.oracle_ratio) << "\n";
  return kOk;
}

TrainOptions train_options(const Config& c, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = c.get("epochs", o.epochs);
  o.batch = c.get("batch", o.batch);
  o.learning_rate = c.get("learning_rate", o.learning_rate);
  o.patience = c.get("patience", o.patience);
  o.price_samples = c.get("price_samples", o.price_samples);
  o.width = c.get("width", o.width);
  o.validation_fraction = c.get("validation_fraction", o.validation_fraction);
  o.seed = seed;
  return o;
}

const std::set<std::string> kTrainKeys{"epochs", "batch", "learning_rate", "patience", "price_samples",
                                       "width", "validation_fraction"};

// train-agg: fit the rival scorer on a scenario set
int cmd_train_agg(const Flags& f, std::ostream& out) {
  std::set<std::string> keys{"seed", "scenarios", "count", "k", "resume", "suite_users",
                             "suite_providers", "suite_price_cap"};
  keys.insert(kTrainKeys.begin(), kTrainKeys.end());
  const Config c(f.config, keys);
  const std::uint64_t seed = seed_of(f, c);
  const int k = f.k ? *f.k : c.get("k", 2);
  TrainOptions o = train_options(c, seed);
  const std::string resume = !f.scorer.empty() ? f.scorer : c.path("resume");
  if (!resume.empty()) o.initial = load_scorer(resume);
  const std::vector<Market> scen = c.has("scenarios") ? scenarios_from_file(c.path("scenarios"))
                                                      : scenario_set(seed, c.get("count", 64), suite_of(c));
  const TrainResult tr = train_scorer(scen, k, o);
  const TrainReport& rep = tr.report;

  const fs::path dir = out_dir(f);
  save_scorer(tr.model, (dir / "scorer.json").string());
  Json j;
  j["format"] = "llmprice.training";
  j["version"] = 1;
  j["k"] = k;
  j["scenarios"] = scen.size();
  j["identity"] = rep.identity;
  j["initial_val_loss"] = rep.initial_val_loss;
  j["avg_baseline_val_loss"] = rep.avg_baseline_val_loss;
  j["best_val_loss"] = rep.best_val_loss;
  j["best_epoch"] = rep.best_epoch;
  j["epochs_run"] = rep.epochs_run;
  j["early_stopped"] = rep.early_stopped;
  j["spsa_batches"] = rep.spsa_batches;
  j["train_loss"] = rep.train_loss;
  j["val_loss"] = rep.val_loss;
  j["wall_time"] = rep.wall_time;
  write_json_file((dir / "training.json").string(), j);
  std::string csv = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < rep.val_loss.size(); ++e) {
    csv += std::to_string(e) + "," + num(rep.train_loss[e]) + "," + num(rep.val_loss[e]) + "\n";
  }
  write_text_file((dir / "loss_curve.csv").string(), csv);
  out << "initial_val_loss " << num(rep.initial_val_loss) << "\navg_baseline_val_loss "
      << num(rep.avg_baseline_val_loss) << "\nbest_val_loss " << num(rep.best_val_loss) << "\n";
  return kOk;
}

// eval: methods x held-out markets, profit ratio against the oracle
int cmd_eval(const Flags& f, std::ostream& out) {
  std::set<std::string> keys{"seed", "train_count", "eval_count", "ks", "methods", "heuristic_k",
                             "suite_users", "suite_providers", "suite_price_cap"};
  keys.insert(kTrainKeys.begin(), kTrainKeys.end());
  const Config c(f.config, keys);
  const std::uint64_t seed = seed_of(f, c);
  const auto methods = c.get<std::vector<std::string>>("methods", {"DA", "MIN", "AVG", "BF"});
  if (methods.empty()) throw ArgumentError("eval: empty method list");
  for (const auto& m : methods) {
    if (m != "DA" && m != "MIN" && m != "AVG" && m != "BF") throw ArgumentError("eval: unknown method '" + m + "'");
  }
  const auto ks = c.get<std::vector<int>>("ks", {1, 2, 3, 4});
  const int hk = f.k ? *f.k : c.get("heuristic_k", 2);
  const SuiteOptions suite = suite_of(c);
  const int train_count = c.get("train_count", 256);
  const int eval_count = c.get("eval_count", 100);
  if (train_count < 1 || eval_count < 1) throw ConfigError("train_count and eval_count must be >= 1");
  for (int k : ks) {
    if (k < 1 || k >= suite.m_providers) throw ConfigError("each K must lie in [1, suite_providers - 1]");
  }
  if (hk < 1 || hk >= suite.m_providers) throw ConfigError("heuristic_k must lie in [1, suite_providers - 1]");
  auto wants = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };

  // Disjoint seeds for training and held-out markets.
  const auto eval_set = scenario_set(2 * seed + 1, eval_count, suite);
  std::vector<std::pair<int, ScorerModel>> models;
  if (wants("DA")) {
    const auto train_set = scenario_set(2 * seed + 2, train_count, suite);
    for (int k : ks) models.emplace_back(k, train_scorer(train_set, k, train_options(c, seed)).model);
  }

  struct Row {
    std::string method;
    std::vector<double> ratio, time;
  };
  std::vector<Row> rows;
  for (const auto& [k, _] : models) rows.push_back({"DA_K" + std::to_string(k), {}, {}});
  if (wants("MIN")) rows.push_back({"MIN", {}, {}});
  if (wants("AVG")) rows.push_back({"AVG", {}, {}});
  if (wants("BF")) rows.push_back({"BF", {}, {}});

  for (const auto& m : eval_set) {
    const PricingResult oracle = optimize_price_oracle(m);
    std::size_t r = 0;
    auto record = [&](const PricingResult& p) {
      const double best = std::max(oracle.best_profit, p.best_profit);
      rows[r].ratio.push_back(best > 0.0 ? p.best_profit / best : 1.0);
      rows[r++].time.push_back(p.solve_time);
    };
    for (const auto& [k, model] : models) record(abstracted_pricing(m, model, k, false));
    if (wants("MIN")) record(price_on_abstraction(m, aggregate(m, heuristic_scores(m, Heuristic::kMin, hk), hk).market, false));
    if (wants("AVG")) record(price_on_abstraction(m, avg_abstraction(m, hk), false));
    if (wants("BF")) record(oracle);
  }

  std::string csv = "method,market,profit_ratio,time\n";
  std::string summary = "method,mean_profit_ratio,mean_time\n";
  for (const auto& row : rows) {
    double mr = 0.0, mt = 0.0;
    for (std::size_t q = 0; q < row.ratio.size(); ++q) {
      char id[16];
      std::snprintf(id, sizeof id, "m%03zu", q);
      csv += row.method + "," + id + "," + num(row.ratio[q]) + "," + num(row.time[q]) + "\n";
      mr += row.ratio[q] / static_cast<double>(row.ratio.size());
      mt += row.time[q] / static_cast<double>(row.time.size());
    }
    summary += row.method + "," + num(mr) + "," + num(mt) + "\n";
    out << row.method << " " << num(mr) << "\n";
  }
  const fs::path dir = out_dir(f);
  write_text_file((dir / "eval.csv").string(), csv);
  write_text_file((dir / "eval_summary.csv").string(), summary);
  return kOk;
}

}  // namespace

int exit_status(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::kInput: return kInputError;
      case ErrorKind::kConvergence: return kConvergenceError;
      case ErrorKind::kScale: return kScaleError;
      default: return kFailure;
    }
  }
  return kFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Equilibrium pricing for LLM routing markets", "llmprice"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file");
    sub->add_option("--seed", flags.seed, "global seed");
    sub->add_option("--out", flags.out, "output directory")->capture_default_str();
  };
  auto* simulate = app.add_subcommand("simulate", "generate synthetic markets, days and scenarios");
  auto* calibrate = app.add_subcommand("calibrate", "fit preference parameters to observed days");
  auto* price = app.add_subcommand("price", "optimise the target price");
  auto* train = app.add_subcommand("train-agg", "train the rival scorer");
  auto* eval = app.add_subcommand("eval", "run the aggregation benchmark matrix");
  for (auto* sub : {simulate, calibrate, price, train, eval}) add_common(sub);
  calibrate->add_option("--direction", flags.direction, "gauss_newton or gradient");
  for (auto* sub : {price, train, eval}) sub->add_option("--k", flags.k, "abstraction size K");
  price->add_flag("--oracle", flags.oracle, "also compute the oracle profit ratio");
  for (auto* sub : {price, train}) sub->add_option("--scorer", flags.scorer, "scorer model file");
  price->add_option("--method", flags.method, "sweep, exact or abstracted")
      ->check(CLI::IsMember({"sweep", "exact", "abstracted"}));

  std::vector<std::string> argv_store{"llmprice"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return e.get_exit_code() == 0 ? kOk : kInputError;
  }

  try {
    if (*simulate) return cmd_simulate(flags, out);
    if (*calibrate) return cmd_calibrate(flags, out);
    if (*price) return cmd_price(flags, out);
    if (*train) return cmd_train_agg(flags, out);
    if (*eval) return cmd_eval(flags, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_status(e);
  }
  return kFailure;
}

}  // namespace llmprice::cli
