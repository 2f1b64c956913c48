#include "llmprice/serialize.hpp"

#include <fstream>
#include <sstream>

#include "llmprice/errors.hpp"

namespace llmprice {

namespace {

constexpr const char* kMarketFormat = "llmprice.market";
constexpr const char* kDaysFormat = "llmprice.observed_days";
constexpr int kVersion = 1;

template <typename T>
T get(const nlohmann::json& doc, const char* key, const std::string& where) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw ConfigError(where + ": missing field '" + key + "'");
  }
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": field '" + key + "' has the wrong type");
  }
}

void check_format(const nlohmann::json& doc, const char* format) {
  if (!doc.is_object()) throw ConfigError(std::string(format) + ": document is not an object");
  const auto tag = get<std::string>(doc, "format", format);
  if (tag != format) throw ConfigError("expected format '" + std::string(format) + "', got '" + tag + "'");
  const auto version = get<int>(doc, "version", format);
  if (version != kVersion) {
    throw ConfigError(std::string(format) + ": unsupported version " + std::to_string(version));
  }
}

}  // namespace

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc, const std::string& what) {
  if (!doc.is_array()) throw ConfigError(what + ": expected an array of rows");
  const auto n = static_cast<Eigen::Index>(doc.size());
  const Eigen::Index m = n == 0 ? 0 : static_cast<Eigen::Index>(doc[0].size());
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!doc[i].is_array() || static_cast<Eigen::Index>(doc[i].size()) != m) {
      throw ConfigError(what + ": ragged matrix");
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!doc[i][j].is_number()) throw ConfigError(what + ": non-numeric entry");
      out(i, j) = doc[i][j].get<double>();
    }
  }
  return out;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& doc, const std::string& what) {
  if (!doc.is_array()) throw ConfigError(what + ": expected an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(doc.size()));
  for (std::size_t i = 0; i < doc.size(); ++i) {
    if (!doc[i].is_number()) throw ConfigError(what + ": non-numeric entry");
    out[static_cast<Eigen::Index>(i)] = doc[i].get<double>();
  }
  return out;
}

Json params_to_json(const PreferenceParams& p) {
  Json out;
  out["w_p"] = p.w_p;
  out["w_q"] = p.w_q;
  out["w_d"] = p.w_d;
  out["biases"] = p.biases;
  return out;
}

PreferenceParams params_from_json(const nlohmann::json& doc) {
  PreferenceParams p;
  p.w_p = doc.contains("w_p") ? get<double>(doc, "w_p", "params") : 1.0;
  p.w_q = get<double>(doc, "w_q", "params");
  p.w_d = get<double>(doc, "w_d", "params");
  if (doc.contains("biases")) p.biases = get<std::vector<double>>(doc, "biases", "params");
  return p;
}

Json market_to_json(const Market& market) {
  Json out;
  out["format"] = kMarketFormat;
  out["version"] = kVersion;
  out["price_cap"] = market.price_cap();
  const auto& w = market.params();
  Json params;
  params["w_p"] = w.w_p;
  params["w_q"] = w.w_q;
  params["w_d"] = w.w_d;
  out["params"] = std::move(params);
  Json providers = Json::array();
  for (const auto& p : market.providers()) {
    Json e;
    e["id"] = p.id;
    e["price"] = p.price;
    e["capacity"] = p.capacity;
    e["perceived_value"] = p.perceived_value;
    e["is_target"] = p.is_target;
    providers.push_back(std::move(e));
  }
  out["providers"] = std::move(providers);
  Json users = Json::array();
  for (const auto& u : market.users()) {
    Json e;
    e["id"] = u.id;
    e["demand"] = u.demand;
    e["delays"] = u.delays;
    users.push_back(std::move(e));
  }
  out["users"] = std::move(users);
  return out;
}

Market market_from_json(const nlohmann::json& doc) {
  check_format(doc, kMarketFormat);
  const auto& params_doc = doc.contains("params") ? doc.at("params") : nlohmann::json::object();
  PreferenceParams params;
  params.w_p = params_doc.contains("w_p") ? get<double>(params_doc, "w_p", "params") : 1.0;
  params.w_q = params_doc.contains("w_q") ? get<double>(params_doc, "w_q", "params") : 1.0;
  params.w_d = params_doc.contains("w_d") ? get<double>(params_doc, "w_d", "params") : 1.0;

  std::vector<Provider> providers;
  const auto& pdoc = doc.contains("providers") ? doc.at("providers") : nlohmann::json();
  if (!pdoc.is_array()) throw ConfigError("market: 'providers' must be an array");
  for (std::size_t j = 0; j < pdoc.size(); ++j) {
    const std::string where = "providers[" + std::to_string(j) + "]";
    Provider p;
    p.id = get<std::string>(pdoc[j], "id", where);
    p.price = get<double>(pdoc[j], "price", where);
    p.capacity = get<double>(pdoc[j], "capacity", where);
    p.perceived_value =
        pdoc[j].contains("perceived_value") ? get<double>(pdoc[j], "perceived_value", where) : 0.0;
    p.is_target = pdoc[j].contains("is_target") ? get<bool>(pdoc[j], "is_target", where) : false;
    providers.push_back(std::move(p));
  }
  std::vector<UserGroup> users;
  const auto& udoc = doc.contains("users") ? doc.at("users") : nlohmann::json();
  if (!udoc.is_array()) throw ConfigError("market: 'users' must be an array");
  for (std::size_t i = 0; i < udoc.size(); ++i) {
    const std::string where = "users[" + std::to_string(i) + "]";
    UserGroup u;
    u.id = get<std::string>(udoc[i], "id", where);
    u.demand = get<double>(udoc[i], "demand", where);
    u.delays = get<std::vector<double>>(udoc[i], "delays", where);
    users.push_back(std::move(u));
  }
  return Market(std::move(providers), std::move(users), std::move(params),
                get<double>(doc, "price_cap", "market"));
}

Json days_to_json(const std::vector<ObservedDay>& days) {
  Json out;
  out["format"] = kDaysFormat;
  out["version"] = kVersion;
  Json arr = Json::array();
  for (const auto& d : days) {
    Json e;
    e["date"] = d.date.str();
    e["demands"] = vector_to_json(d.demands);
    e["prices"] = vector_to_json(d.prices);
    e["capacities"] = vector_to_json(d.capacities);
    e["delays"] = matrix_to_json(d.delays);
    e["flows"] = matrix_to_json(d.flows);
    arr.push_back(std::move(e));
  }
  out["days"] = std::move(arr);
  return out;
}

std::vector<ObservedDay> days_from_json(const nlohmann::json& doc) {
  check_format(doc, kDaysFormat);
  if (!doc.contains("days") || !doc.at("days").is_array()) {
    throw ConfigError("observed days: 'days' must be an array");
  }
  std::vector<ObservedDay> out;
  for (std::size_t t = 0; t < doc.at("days").size(); ++t) {
    const auto& e = doc.at("days")[t];
    const std::string where = "days[" + std::to_string(t) + "]";
    Date date = Date::parse(get<std::string>(e, "date", where));
    for (const char* key : {"demands", "prices", "capacities", "delays", "flows"}) {
      if (!e.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
    }
    out.push_back(make_observed_day(date, matrix_from_json(e.at("flows"), where + ".flows"),
                                    vector_from_json(e.at("demands"), where + ".demands"),
                                    vector_from_json(e.at("prices"), where + ".prices"),
                                    vector_from_json(e.at("capacities"), where + ".capacities"),
                                    matrix_from_json(e.at("delays"), where + ".delays")));
  }
  return out;
}

Json equilibrium_to_json(const EquilibriumResult& r) {
  Json out;
  out["flow"] = matrix_to_json(r.flow);
  out["user_multipliers"] = vector_to_json(r.user_multipliers);
  out["congestion"] = vector_to_json(r.congestion);
  out["potential"] = r.potential;
  out["wardrop_gap"] = r.wardrop_gap;
  out["kkt_residual"] = r.kkt_residual;
  out["iterations"] = r.iterations;
  return out;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NotFoundError("cannot write '" + path + "'");
  out << text;
  if (!out) throw NotFoundError("failed writing '" + path + "'");
}

void write_json_file(const std::string& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

void save_market(const std::string& path, const Market& market) {
  write_json_file(path, market_to_json(market));
}

Market load_market(const std::string& path) {
  try {
    return market_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace llmprice
