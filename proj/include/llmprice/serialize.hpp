#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "llmprice/equilibrium.hpp"
#include "llmprice/market.hpp"

namespace llmprice {

using Json = nlohmann::ordered_json;

// Market config: format tag, price_cap, params, providers[], users[].
// Field order is fixed so equal markets serialise to equal bytes.
Json market_to_json(const Market& market);
Market market_from_json(const nlohmann::json& doc);

Json params_to_json(const PreferenceParams& params);
PreferenceParams params_from_json(const nlohmann::json& doc);

// Observed days: {"format": ..., "days": [{date, demands, prices, capacities,
// delays, flows}]}; matrices are arrays of rows.
Json days_to_json(const std::vector<ObservedDay>& days);
std::vector<ObservedDay> days_from_json(const nlohmann::json& doc);

Json equilibrium_to_json(const EquilibriumResult& result);

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc, const std::string& what);
Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& doc, const std::string& what);

// File helpers. Reads throw NotFoundError / ConfigError with the path.
nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& doc);
void write_text_file(const std::string& path, const std::string& text);

void save_market(const std::string& path, const Market& market);
Market load_market(const std::string& path);

}  // namespace llmprice
