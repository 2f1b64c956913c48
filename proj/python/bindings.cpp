#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "commands.hpp"
#include "llmprice/abstraction.hpp"
#include "llmprice/calibration.hpp"
#include "llmprice/errors.hpp"
#include "llmprice/scenarios.hpp"
#include "llmprice/serialize.hpp"

namespace py = pybind11;
using namespace llmprice;

namespace {

SolveOptions solve_options(double tolerance, int max_rounds) {
  SolveOptions o;
  o.tolerance = tolerance;
  o.max_rounds = max_rounds;
  return o;
}

py::dict train_report_dict(const TrainReport& r) {
  py::dict d;
  d["train_loss"] = r.train_loss;
  d["val_loss"] = r.val_loss;
  d["initial_val_loss"] = r.initial_val_loss;
  d["avg_baseline_val_loss"] = r.avg_baseline_val_loss;
  d["best_val_loss"] = r.best_val_loss;
  d["best_epoch"] = r.best_epoch;
  d["epochs_run"] = r.epochs_run;
  d["spsa_batches"] = r.spsa_batches;
  d["early_stopped"] = r.early_stopped;
  d["identity"] = r.identity;
  d["wall_time"] = r.wall_time;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Equilibrium pricing for LLM routing markets";

  // Module-owned exception types; the handles are kept for the module's life.
  static PyObject* base_error = py::exception<Error>(m, "LlmpriceError").release().ptr();
  static PyObject* input_error = py::exception<Error>(m, "InputError", base_error).release().ptr();
  static PyObject* convergence_error = py::exception<Error>(m, "ConvergenceError", base_error).release().ptr();
  static PyObject* scale_error = py::exception<Error>(m, "ScaleError", base_error).release().ptr();
  static PyObject* numerical_error = py::exception<Error>(m, "NumericalError", base_error).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyObject* type = base_error;
      switch (e.kind()) {
        case ErrorKind::kInput: type = input_error; break;
        case ErrorKind::kConvergence: type = convergence_error; break;
        case ErrorKind::kScale: type = scale_error; break;
        case ErrorKind::kNumerical: type = numerical_error; break;
        default: break;
      }
      py::set_error(type, e.what());
    }
  });

  py::class_<Market>(m, "Market")
      .def_static("from_json", [](const std::string& text) { return market_from_json(nlohmann::json::parse(text)); })
      .def_static("load", &load_market, py::arg("path"))
      .def_static("synthetic",
                  [](std::uint64_t seed, int n_users, int m_providers, double w_q, double w_d) {
                    SynthRanges r;
                    r.w_q = w_q;
                    r.w_d = w_d;
                    return synth_market(seed, n_users, m_providers, r);
                  },
                  py::arg("seed"), py::arg("n_users"), py::arg("m_providers"), py::arg("w_q") = 1.0,
                  py::arg("w_d") = 1.0)
      .def_static("suite",
                  [](std::uint64_t seed, int n_users, int m_providers, double price_cap) {
                    return suite_market(seed, {n_users, m_providers, price_cap});
                  },
                  py::arg("seed"), py::arg("n_users") = 3, py::arg("m_providers") = 8, py::arg("price_cap") = 20.0)
      .def("to_json", [](const Market& mk) { return market_to_json(mk).dump(2); })
      .def("save", [](const Market& mk, const std::string& path) { save_market(path, mk); }, py::arg("path"))
      .def("with_target_price", &Market::with_target_price, py::arg("price"))
      .def_property_readonly("n_users", &Market::n_users)
      .def_property_readonly("n_providers", &Market::n_providers)
      .def_property_readonly("price_cap", &Market::price_cap)
      .def_property_readonly("prices", [](const Market& mk) { return Eigen::VectorXd(mk.prices()); })
      .def_property_readonly("capacities", [](const Market& mk) { return Eigen::VectorXd(mk.capacities()); })
      .def_property_readonly("biases", [](const Market& mk) { return Eigen::VectorXd(mk.biases()); })
      .def_property_readonly("demands", [](const Market& mk) { return Eigen::VectorXd(mk.demands()); })
      .def_property_readonly("delays", [](const Market& mk) { return Eigen::MatrixXd(mk.delays()); })
      .def_property_readonly("w_q", [](const Market& mk) { return mk.params().w_q; })
      .def_property_readonly("w_d", [](const Market& mk) { return mk.params().w_d; });

  py::class_<EquilibriumResult>(m, "EquilibriumResult")
      .def_readonly("flow", &EquilibriumResult::flow)
      .def_readonly("user_multipliers", &EquilibriumResult::user_multipliers)
      .def_readonly("potential", &EquilibriumResult::potential)
      .def_readonly("wardrop_gap", &EquilibriumResult::wardrop_gap)
      .def_readonly("kkt_residual", &EquilibriumResult::kkt_residual)
      .def_readonly("iterations", &EquilibriumResult::iterations)
      .def_readonly("congestion", &EquilibriumResult::congestion);

  m.def("solve_equilibrium",
        [](const Market& mk, double tolerance, int max_rounds) {
          return solve_equilibrium(mk, solve_options(tolerance, max_rounds));
        },
        py::arg("market"), py::arg("tolerance") = 1e-8, py::arg("max_rounds") = 10000);
  m.def("wardrop_gap", &wardrop_gap, py::arg("flow"), py::arg("market"));

  py::class_<ObservedDay>(m, "ObservedDay")
      .def_property_readonly("date", [](const ObservedDay& d) { return d.date.str(); })
      .def_readonly("flows", &ObservedDay::flows)
      .def_readonly("demands", &ObservedDay::demands)
      .def_readonly("prices", &ObservedDay::prices)
      .def_readonly("capacities", &ObservedDay::capacities)
      .def_readonly("delays", &ObservedDay::delays);

  m.def("simulate_days",
        [](const Market& mk, int count, std::uint64_t seed, double price_jitter, double demand_jitter) {
          return simulate_days(mk, count, seed, price_jitter, demand_jitter);
        },
        py::arg("market"), py::arg("count"), py::arg("seed"), py::arg("price_jitter") = 0.3,
        py::arg("demand_jitter") = 0.2);
  m.def("days_to_json", [](const std::vector<ObservedDay>& days) { return days_to_json(days).dump(2); });
  m.def("days_from_json", [](const std::string& text) { return days_from_json(nlohmann::json::parse(text)); });

  py::class_<BiasInit>(m, "BiasInit")
      .def_readonly("biases", &BiasInit::biases)
      .def_readonly("objective", &BiasInit::objective)
      .def_readonly("total_slack", &BiasInit::total_slack)
      .def_readonly("relaxed", &BiasInit::relaxed);
  m.def("init_biases", [](const std::vector<ObservedDay>& days) { return init_biases(days); }, py::arg("days"));

  py::class_<CalibrationReport>(m, "CalibrationReport")
      .def_property_readonly("w_q", [](const CalibrationReport& r) { return r.theta.w_q; })
      .def_property_readonly("w_d", [](const CalibrationReport& r) { return r.theta.w_d; })
      .def_property_readonly("biases", [](const CalibrationReport& r) { return r.theta.biases; })
      .def_readonly("loss_trace", &CalibrationReport::loss_trace)
      .def_readonly("r2", &CalibrationReport::r2)
      .def_readonly("mae", &CalibrationReport::mae)
      .def_readonly("converged", &CalibrationReport::converged)
      .def_readonly("iterations", &CalibrationReport::iterations)
      .def_readonly("wall_time", &CalibrationReport::wall_time);

  m.def("fit_theta",
        [](const std::vector<ObservedDay>& days, std::optional<std::vector<double>> biases, double w_q,
           double w_d, int max_iters, const std::string& direction) {
          FitOptions o;
          o.max_iters = max_iters;
          if (direction == "gradient") o.direction = Direction::kGradient;
          else if (direction != "gauss_newton") throw ArgumentError("direction must be 'gauss_newton' or 'gradient'");
          std::vector<double> b = biases ? *biases : std::vector<double>{};
          if (!biases) {
            const auto init = init_biases(days);
            b.assign(init.biases.data(), init.biases.data() + init.biases.size());
          }
          return fit_theta(days, {1.0, w_q, w_d, b}, o);
        },
        py::arg("days"), py::arg("biases") = py::none(), py::arg("w_q") = 1.0, py::arg("w_d") = 1.0,
        py::arg("max_iters") = 500, py::arg("direction") = "gauss_newton");
  m.def("flow_r2",
        [](const std::vector<ObservedDay>& days, double w_q, double w_d, const std::vector<double>& biases) {
          return flow_fit({1.0, w_q, w_d, biases}, days).r2;
        },
        py::arg("days"), py::arg("w_q"), py::arg("w_d"), py::arg("biases"));

  py::class_<PricingResult>(m, "PricingResult")
      .def_readonly("best_price", &PricingResult::best_price)
      .def_readonly("best_profit", &PricingResult::best_profit)
      .def_readonly("method", &PricingResult::method)
      .def_readonly("oracle_ratio", &PricingResult::oracle_ratio)
      .def_readonly("solve_time", &PricingResult::solve_time)
      .def_property_readonly("curve", [](const PricingResult& r) {
        Eigen::MatrixXd c(r.curve.size(), 3);
        for (std::size_t k = 0; k < r.curve.size(); ++k) c.row(k) << r.curve[k].price, r.curve[k].profit, r.curve[k].load;
        return c;
      });

  m.def("profit", [](const Market& mk, double price) { return profit(price, mk).profit; }, py::arg("market"),
        py::arg("price"));
  m.def("optimize_price",
        [](const Market& mk, const std::string& method) {
          if (method == "sweep") return optimize_price_sweep(mk);
          if (method == "exact") return optimize_price_exact(mk);
          if (method == "dense") return optimize_price_dense(mk);
          if (method == "oracle") return optimize_price_oracle(mk);
          throw ArgumentError("unknown method '" + method + "' (sweep, exact, dense, oracle)");
        },
        py::arg("market"), py::arg("method") = "sweep");

  py::class_<ScorerModel>(m, "ScorerModel")
      .def_static("init", &ScorerModel::init, py::arg("seed"), py::arg("width") = 32)
      .def_static("load", &load_scorer, py::arg("path"))
      .def("save", [](const ScorerModel& s, const std::string& path) { save_scorer(s, path); }, py::arg("path"))
      .def_readonly("width", &ScorerModel::width)
      .def_readonly("schema_hash", &ScorerModel::schema_hash)
      .def("scores", [](const ScorerModel& s, const Market& mk) {
        const auto r = score_rivals(s, mk);
        return py::make_tuple(r.sum_scores, r.avg_scores);
      });

  m.def("feature_names", &feature_names);
  m.def("rival_features", &rival_features, py::arg("market"));
  m.def("train_scorer",
        [](const std::vector<Market>& scenarios, int k, int epochs, std::uint64_t seed, int width) {
          TrainOptions o;
          o.epochs = epochs;
          o.seed = seed;
          o.width = width;
          const auto r = train_scorer(scenarios, k, o);
          return py::make_tuple(r.model, train_report_dict(r.report));
        },
        py::arg("scenarios"), py::arg("k"), py::arg("epochs") = 200, py::arg("seed") = 0, py::arg("width") = 32);
  m.def("scenario_set",
        [](std::uint64_t seed, int count, int n_users, int m_providers, double price_cap) {
          return scenario_set(seed, count, {n_users, m_providers, price_cap});
        },
        py::arg("seed"), py::arg("count"), py::arg("n_users") = 3, py::arg("m_providers") = 8,
        py::arg("price_cap") = 20.0);
  m.def("abstracted_pricing",
        [](const Market& mk, const ScorerModel& s, int k, bool with_oracle) {
          return abstracted_pricing(mk, s, k, with_oracle);
        },
        py::arg("market"), py::arg("scorer"), py::arg("k"), py::arg("with_oracle") = false);

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int status = llmprice::cli::run(args, out, err);
          return py::make_tuple(status, out.str(), err.str());
        },
        py::arg("args"), "Run a command-line subcommand in-process; returns (status, stdout, stderr).");
}
