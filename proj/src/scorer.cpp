#include "llmprice/scorer.hpp"

#include <cmath>
#include <cstdio>

#include "llmprice/errors.hpp"
#include "llmprice/random.hpp"
#include "llmprice/serialize.hpp"

namespace llmprice {

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelFormat = "llmprice.scorer";
constexpr double kStdFloor = 1e-9;

// Columns 5..8 are target-relative and are not centred.
constexpr bool kCentred[kFeatureCount] = {true, true, true, true, true, false, false, false, false};

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_finite(const Eigen::MatrixXd& m, const char* layer) {
  if (!m.allFinite()) throw NumericalError(std::string("scorer produced non-finite values in ") + layer);
}

}  // namespace

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names{
      "price",           "bias",           "log_capacity",      "mean_delay",
      "min_delay",       "price_gap",      "bias_gap",          "log_capacity_gap",
      "demand_weighted_delay_gap"};
  return names;
}

std::string feature_schema_hash() {
  // FNV-1a over the names and the centring mask
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (int k = 0; k < kFeatureCount; ++k) {
    for (char c : feature_names()[k]) mix(static_cast<unsigned char>(c));
    mix(kCentred[k] ? '1' : '0');
    mix('|');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Eigen::MatrixXd rival_features(const Market& market) {
  const int r = market.n_rivals();
  if (r < 1) throw ArgumentError("rival_features: market has no rivals");
  const int s = market.target_index();
  const Eigen::MatrixXd& d = market.delays();
  const Eigen::VectorXd& dem = market.demands();
  const double total = dem.sum();
  Eigen::MatrixXd x(r, kFeatureCount);
  for (int j = 0; j < r; ++j) {
    const double p = market.prices()[j], b = market.biases()[j];
    const double la = std::log(market.capacities()[j]);
    double gap = 0.0;
    for (int i = 0; i < market.n_users(); ++i) {
      const double w = total > 0.0 ? dem[i] / total : 1.0 / market.n_users();
      gap += w * (d(i, j) - d(i, s));
    }
    x.row(j) << p, b, la, d.col(j).mean(), d.col(j).minCoeff(), p - market.prices()[s],
        b - market.biases()[s], la - std::log(market.capacities()[s]), gap;
  }
  for (int k = 0; k < kFeatureCount; ++k) {
    const double mean = x.col(k).mean();
    const double sd = std::sqrt((x.col(k).array() - mean).square().mean());
    if (kCentred[k]) x.col(k).array() -= mean;
    if (sd > kStdFloor) x.col(k) /= sd;
  }
  return x;
}

ScorerModel ScorerModel::init(std::uint64_t seed, int width) {
  if (width < 1) throw ArgumentError("scorer width must be positive");
  ScorerModel m;
  m.width = width;
  Rng rng(mix_seed(seed, 0x5c0e));
  auto fill = [&](Eigen::MatrixXd& w, int rows, int cols) {
    const double scale = std::sqrt(6.0 / (rows + cols));
    w.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-scale, scale);
  };
  fill(m.w1, width, kFeatureCount);
  m.b1 = Eigen::VectorXd::Zero(width);
  fill(m.w2, width, 2 * width);
  m.b2 = Eigen::VectorXd::Zero(width);
  m.head = Eigen::MatrixXd::Zero(2, width);
  m.head_bias << std::log(std::exp(1.0) - 1.0), 0.0;
  m.schema_hash = feature_schema_hash();
  return m;
}

Eigen::Index ScorerModel::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + head.size() + head_bias.size();
}

Eigen::VectorXd ScorerModel::flat() const {
  Eigen::VectorXd v(param_count());
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    v.segment(o, m.size()) = m.reshaped();
    o += m.size();
  };
  put(w1);
  put(b1);
  put(w2);
  put(b2);
  put(head);
  put(head_bias);
  return v;
}

void ScorerModel::set_flat(const Eigen::VectorXd& v) {
  if (v.size() != param_count()) throw ShapeError("scorer parameter vector has the wrong length");
  Eigen::Index o = 0;
  auto take = [&](auto& m) {
    m.reshaped() = v.segment(o, m.size());
    o += m.size();
  };
  take(w1);
  take(b1);
  take(w2);
  take(b2);
  take(head);
  take(head_bias);
}

RivalScores score_features(const ScorerModel& model, const Eigen::MatrixXd& x, ScorerTape* tape) {
  const int w = model.width;
  const Eigen::Index r = x.rows();
  if (x.cols() != kFeatureCount) throw ShapeError("scorer expects " + std::to_string(kFeatureCount) + " features");
  Eigen::MatrixXd h1 = ((x * model.w1.transpose()).rowwise() + model.b1.transpose()).array().tanh();
  check_finite(h1, "embedding layer");
  const Eigen::RowVectorXd ctx = h1.colwise().mean();
  const Eigen::RowVectorXd shared = ctx * model.w2.rightCols(w).transpose() + model.b2.transpose();
  Eigen::MatrixXd h2 = ((h1 * model.w2.leftCols(w).transpose()).rowwise() + shared).array().tanh();
  check_finite(h2, "interaction layer");
  Eigen::MatrixXd z = (h2 * model.head.transpose()).rowwise() + model.head_bias.transpose();
  RivalScores out;
  out.sum_scores.resize(r);
  out.avg_scores.resize(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    out.sum_scores[j] = softplus(z(j, 0));
    out.avg_scores[j] = std::exp(z(j, 1));
  }
  check_finite(out.sum_scores, "sum head");
  check_finite(out.avg_scores, "avg head");
  if (tape) {
    tape->x = x;
    tape->h1 = std::move(h1);
    tape->h2 = std::move(h2);
    tape->z = std::move(z);
    tape->context = ctx;
  }
  return out;
}

RivalScores score_rivals(const ScorerModel& model, const Market& market) {
  if (model.schema_hash != feature_schema_hash()) {
    throw SchemaError("scorer was trained for feature schema " + model.schema_hash +
                      ", this build uses " + feature_schema_hash());
  }
  return score_features(model, rival_features(market));
}

Eigen::VectorXd scorer_backward(const ScorerModel& model, const ScorerTape& t,
                                const Eigen::VectorXd& d_sum, const Eigen::VectorXd& d_avg) {
  const int w = model.width;
  const Eigen::Index r = t.x.rows();
  Eigen::MatrixXd dz(r, 2);
  for (Eigen::Index j = 0; j < r; ++j) {
    dz(j, 0) = d_sum[j] * sigmoid(t.z(j, 0));
    dz(j, 1) = d_avg[j] * std::exp(t.z(j, 1));
  }
  ScorerModel g = model;
  g.head = dz.transpose() * t.h2;
  g.head_bias = dz.colwise().sum().transpose();
  const Eigen::MatrixXd da2 = (dz * model.head).array() * (1.0 - t.h2.array().square());
  const Eigen::RowVectorXd da2_sum = da2.colwise().sum();
  g.w2.leftCols(w) = da2.transpose() * t.h1;
  g.w2.rightCols(w) = da2_sum.transpose() * t.context;
  g.b2 = da2_sum.transpose();
  Eigen::MatrixXd dh1 = da2 * model.w2.leftCols(w);
  dh1.rowwise() += (da2_sum * model.w2.rightCols(w)) / static_cast<double>(r);
  const Eigen::MatrixXd da1 = dh1.array() * (1.0 - t.h1.array().square());
  g.w1 = da1.transpose() * t.x;
  g.b1 = da1.colwise().sum().transpose();
  return g.flat();
}

void save_scorer(const ScorerModel& model, const std::string& path) {
  Json doc;
  doc["format"] = kModelFormat;
  doc["version"] = kModelVersion;
  doc["schema_hash"] = model.schema_hash;
  doc["features"] = feature_names();
  doc["width"] = model.width;
  const Eigen::VectorXd v = model.flat();
  doc["params"] = std::vector<double>(v.data(), v.data() + v.size());
  write_json_file(path, doc);
}

ScorerModel load_scorer(const std::string& path) {
  const auto doc = read_json_file(path);
  try {
    if (doc.value("format", "") != kModelFormat) throw ConfigError("not a scorer model file");
    if (doc.at("version").get<int>() != kModelVersion) {
      throw ConfigError("unsupported scorer model version " + doc.at("version").dump());
    }
    ScorerModel m = ScorerModel::init(0, doc.at("width").get<int>());
    m.schema_hash = doc.at("schema_hash").get<std::string>();
    const auto params = doc.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != m.param_count()) {
      throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match width");
    }
    m.set_flat(Eigen::Map<const Eigen::VectorXd>(params.data(), m.param_count()));
    if (!m.flat().allFinite()) throw ConfigError("non-finite scorer parameters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed scorer model: " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace llmprice
