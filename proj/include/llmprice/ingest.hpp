#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "llmprice/market.hpp"

namespace llmprice {

// One row of the per-app usage table.
struct UsageRecord {
  Date date;
  std::string app;
  std::string model;
  std::uint64_t tokens = 0;  // raw token count
  double output_speed = 0.0;         // tokens/s
  double time_to_first_token = 0.0;  // s
};

// One row of the per-model performance table.
struct PerformanceRecord {
  Date date;
  std::string model;
  double usage_millions = 0.0;
  double output_speed = 0.0;
  double time_to_first_token = 0.0;
};

// Header: Date,app_name,model_name,model_usage_token,output_speed,time_to_first_token
std::vector<UsageRecord> load_usage_csv(const std::string& path);
// Header: Date,model_name,total_token_usage_M,output_speed,time_to_first_token
std::vector<PerformanceRecord> load_performance_csv(const std::string& path);

// Same parsers over in-memory text; `source` names the input in messages.
std::vector<UsageRecord> parse_usage_csv(const std::string& text,
                                         const std::string& source = "<memory>");
std::vector<PerformanceRecord> parse_performance_csv(const std::string& text,
                                                     const std::string& source = "<memory>");

struct MarketBuildOptions {
  // An app is dropped for a model when its usage there is below this
  // fraction of the model's top app.
  double min_share_of_top_app = 0.01;
  double price_cap = 0.0;  // <= 0 means twice the highest listed price
};

struct BuiltMarket {
  Market market;
  std::vector<ObservedDay> days;  // one per date in range that has data
};

// `prices` maps every model in range to its unit price ($ per million
// tokens); the CSV schemas carry no prices. Capacities are
// total usage (millions) over the range divided by mean output speed.
BuiltMarket build_market(const std::vector<UsageRecord>& usage,
                         const std::vector<PerformanceRecord>& performance,
                         const DateRange& range, const std::string& target_model,
                         const std::map<std::string, double>& prices,
                         const MarketBuildOptions& options = {});

}  // namespace llmprice
