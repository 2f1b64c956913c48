#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <sstream>

#include "commands.hpp"
#include "outputs.hpp"

namespace fs = std::filesystem;
using namespace llmprice::testing;

namespace {

const fs::path kFixtures = fs::path(LLMPRICE_SOURCE_DIR) / "data" / "fixtures";

struct Run {
  int status;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int s = llmprice::cli::run(args, out, err);
  return {s, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("llmprice_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fixture(const std::string& rel) { return (kFixtures / rel).string(); }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text(p)); }

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("calibrate fixture") {
  const auto dir = scratch("calibrate");
  const auto r = cli({"calibrate", "--config", fixture("calibration/config.json"), "--out", (dir / "a").string()});
  REQUIRE(r.status == llmprice::cli::kOk);
  CHECK(r.out.find("r2 ") != std::string::npos);
  CHECK(r.out.find("mae ") != std::string::npos);
  CHECK(r.out.find("final_loss ") != std::string::npos);
  const auto rep = read_json(dir / "a" / "calibration.json");
  CHECK(rep["r2"].get<double>() >= 0.99);
  CHECK(rep["holdout"]["r2"].get<double>() >= 0.99);
  CHECK(fs::exists(dir / "a" / "loss_trace.csv"));
  CHECK(fs::exists(dir / "a" / "fitted_market.json"));

  const auto again = cli({"calibrate", "--config", fixture("calibration/config.json"), "--out", (dir / "b").string()});
  REQUIRE(again.status == 0);
  CHECK(dir_fingerprint(dir / "a") == dir_fingerprint(dir / "b"));
}

TEST_CASE("calibrate input and convergence errors") {
  const auto dir = scratch("calibrate_err");
  write(dir / "missing.json", R"({"days": "no_such_days.json"})");
  auto r = cli({"calibrate", "--config", (dir / "missing.json").string(), "--out", (dir / "o").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  CHECK(r.err.find("no_such_days.json") != std::string::npos);

  r = cli({"calibrate", "--config", (dir / "absent_config.json").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  CHECK(r.err.find("absent_config.json") != std::string::npos);

  write(dir / "bad_dir.json", "{\"days\": \"" + fixture("calibration/days.json") + "\", \"direction\": \"sideways\"}");
  CHECK(cli({"calibrate", "--config", (dir / "bad_dir.json").string()}).status == llmprice::cli::kInputError);

  write(dir / "stiff.json", "{\"days\": \"" + fixture("calibration/days.json") +
                                "\", \"max_rounds\": 1, \"tolerance\": 1e-15}");
  r = cli({"calibrate", "--config", (dir / "stiff.json").string(), "--out", (dir / "o").string()});
  CHECK(r.status == llmprice::cli::kConvergenceError);
}

TEST_CASE("malformed configs fail fast") {
  const auto dir = scratch("malformed");
  write(dir / "unknown.json", R"({"count": 64, "bogus_key": 1})");
  write(dir / "broken.json", R"({"count": )");
  write(dir / "wrong_type.json", R"({"count": "many"})");
  for (const char* name : {"unknown.json", "broken.json", "wrong_type.json"}) {
    for (const char* cmd : {"simulate", "train-agg", "eval"}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = cli({cmd, "--config", (dir / name).string(), "--out", (dir / "o").string()});
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      INFO(cmd << " " << name);
      CHECK(r.status == llmprice::cli::kInputError);
      CHECK(dt < 0.1);
    }
  }
  CHECK(cli({}).status == llmprice::cli::kInputError);
  CHECK(cli({"frobnicate"}).status == llmprice::cli::kInputError);
  CHECK(cli({"price", "--method", "annealing"}).status == llmprice::cli::kInputError);
  CHECK(cli({"--help"}).status == llmprice::cli::kOk);
}

TEST_CASE("price fixtures") {
  const auto dir = scratch("price");
  auto r = cli({"price", "--config", fixture("monopoly/price.json"), "--out", (dir / "mono").string()});
  REQUIRE(r.status == 0);
  auto rep = read_json(dir / "mono" / "pricing.json");
  CHECK(rep["best_price"].get<double>() == 20.0);
  CHECK_FALSE(rep.contains("oracle_ratio"));
  CHECK(read_text(dir / "mono" / "curve.csv").rfind("price,profit,load\n", 0) == 0);

  r = cli({"price", "--config", fixture("oracle_scale/price.json"), "--oracle", "--out", (dir / "os").string()});
  REQUIRE(r.status == 0);
  rep = read_json(dir / "os" / "pricing.json");
  REQUIRE(rep.contains("oracle_ratio"));
  CHECK(rep["oracle_ratio"].get<double>() >= 0.999);
  CHECK(rep["oracle_ratio"].get<double>() <= 1.0);

  r = cli({"price", "--config", fixture("oracle_scale/price.json"), "--method", "exact", "--out", (dir / "ex").string()});
  REQUIRE(r.status == 0);
  CHECK(read_json(dir / "ex" / "pricing.json")["method"] == "exact_piecewise");

  r = cli({"price", "--config", fixture("eight_provider/price.json"), "--method", "exact", "--out", (dir / "big").string()});
  CHECK(r.status == llmprice::cli::kScaleError);

  r = cli({"price", "--config", fixture("eight_provider/price.json"), "--out", (dir / "noscorer").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  CHECK(r.err.find("--scorer") != std::string::npos);
}

TEST_CASE("train-agg and abstracted pricing") {
  const auto dir = scratch("train");
  auto r = cli({"train-agg", "--config", fixture("train_agg/config.json"), "--out", (dir / "t").string()});
  REQUIRE(r.status == 0);
  const auto rep = read_json(dir / "t" / "training.json");
  CHECK(rep["best_val_loss"].get<double>() < rep["avg_baseline_val_loss"].get<double>());
  CHECK(rep["best_val_loss"].get<double>() < rep["initial_val_loss"].get<double>());
  CHECK(fs::exists(dir / "t" / "loss_curve.csv"));
  const std::string scorer = (dir / "t" / "scorer.json").string();

  r = cli({"price", "--config", fixture("eight_provider/price.json"), "--method", "abstracted", "--scorer", scorer, "--oracle", "--out",
           (dir / "p").string()});
  REQUIRE(r.status == 0);
  const auto pr = read_json(dir / "p" / "pricing.json");
  CHECK(pr["method"] == "abstracted");
  CHECK(pr["oracle_ratio"].get<double>() >= 0.90);

  // a model from another featurizer is refused
  auto model = read_json(scorer);
  model["schema_hash"] = "0000000000000000";
  write(dir / "foreign.json", model.dump());
  r = cli({"price", "--config", fixture("eight_provider/price.json"), "--scorer", (dir / "foreign.json").string(),
           "--out", (dir / "f").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  CHECK(r.err.find("schema") != std::string::npos);

  r = cli({"train-agg", "--config", fixture("train_agg/config.json"), "--scorer",
           fixture("train_agg/corrupt_scorer.json"), "--out", (dir / "c").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  CHECK(r.err.find("corrupt_scorer.json") != std::string::npos);

  // resuming from the trained model keeps going from it
  r = cli({"train-agg", "--config", fixture("train_agg/config.json"), "--scorer", scorer, "--out",
           (dir / "resume").string()});
  REQUIRE(r.status == 0);
  CHECK(read_json(dir / "resume" / "training.json")["initial_val_loss"].get<double>() ==
        doctest::Approx(rep["best_val_loss"].get<double>()).epsilon(1e-9));
}

TEST_CASE("train-agg identity K is a no-op") {
  const auto dir = scratch("identity");
  const auto r = cli({"train-agg", "--config", fixture("train_agg/config.json"), "--k", "7", "--out", dir.string()});
  REQUIRE(r.status == 0);
  const auto rep = read_json(dir / "training.json");
  CHECK(rep["identity"].get<bool>());
  CHECK(rep["best_val_loss"].get<double>() == 0.0);
  CHECK(rep["epochs_run"].get<int>() == 0);
}

TEST_CASE("simulate and eval") {
  const auto dir = scratch("eval");
  write(dir / "sim.json", R"({"n_users": 2, "m_providers": 3, "days": 3, "scenarios": 4})");
  REQUIRE(cli({"simulate", "--config", (dir / "sim.json").string(), "--seed", "9", "--out", (dir / "s1").string()}).status == 0);
  REQUIRE(cli({"simulate", "--config", (dir / "sim.json").string(), "--seed", "9", "--out", (dir / "s2").string()}).status == 0);
  CHECK(dir_fingerprint(dir / "s1") == dir_fingerprint(dir / "s2"));
  CHECK(fs::exists(dir / "s1" / "scenarios.json"));
  REQUIRE(cli({"simulate", "--config", (dir / "sim.json").string(), "--seed", "10", "--out", (dir / "s3").string()}).status == 0);
  CHECK(read_text(dir / "s1" / "days.json") != read_text(dir / "s3" / "days.json"));

  write(dir / "small.json", R"({"train_count": 8, "eval_count": 3, "epochs": 3})");
  auto r = cli({"eval", "--config", (dir / "small.json").string(), "--out", (dir / "e").string()});
  REQUIRE(r.status == 0);
  const std::string csv = read_text(dir / "e" / "eval.csv");
  std::vector<std::string> order;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "method,market,profit_ratio,time");
  while (std::getline(in, line)) {
    const auto method = line.substr(0, line.find(','));
    if (order.empty() || order.back() != method) order.push_back(method);
  }
  CHECK(order == std::vector<std::string>{"DA_K1", "DA_K2", "DA_K3", "DA_K4", "MIN", "AVG", "BF"});
  CHECK(fs::exists(dir / "e" / "eval_summary.csv"));

  r = cli({"eval", "--config", fixture("eval/empty_methods.json"), "--out", (dir / "x").string()});
  CHECK(r.status == llmprice::cli::kInputError);
  write(dir / "bad_k.json", R"({"ks": [1, 9]})");
  CHECK(cli({"eval", "--config", (dir / "bad_k.json").string()}).status == llmprice::cli::kInputError);
}
