#include "llmprice/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "llmprice/errors.hpp"

namespace llmprice {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Splits text into rows and maps header names to column positions. Every
// expected column must be present exactly once; extra columns are rejected.
struct Table {
  std::vector<std::size_t> columns;  // position of each expected column
  std::vector<std::vector<std::string>> rows;
  std::vector<long> row_numbers;
};

Table read_table(const std::string& text, const std::vector<std::string>& expected,
                 const std::string& source) {
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  Table t;
  long row = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (!have_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
          static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
      }
      if (trim(line).empty()) continue;
      const auto header = split(line);
      width = header.size();
      for (const auto& name : expected) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
          throw SchemaError(source + ": missing column '" + name + "'");
        }
        t.columns.push_back(static_cast<std::size_t>(it - header.begin()));
      }
      for (const auto& name : header) {
        if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
          throw SchemaError(source + ": unexpected column '" + name + "'");
        }
      }
      have_header = true;
      continue;
    }
    ++row;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (fields.size() != width) {
      throw ParseError(source + ": row " + std::to_string(row) + " has " +
                           std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(width),
                       row);
    }
    std::vector<std::string> picked;
    for (auto c : t.columns) picked.push_back(std::move(fields[c]));
    t.rows.push_back(std::move(picked));
    t.row_numbers.push_back(row);
  }
  if (!have_header) throw SchemaError(source + ": missing header row");
  return t;
}

double parse_decimal(const std::string& s, const char* column, long row, const std::string& source) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError(source + ": row " + std::to_string(row) + ": column " + column +
                         " is not a number: '" + s + "'",
                     row);
  }
  if (v < 0.0) {
    throw ValidationError(source + ": row " + std::to_string(row) + ": column " + column +
                              " must be nonnegative",
                          row);
  }
  return v;
}

std::uint64_t parse_count(const std::string& s, const char* column, long row,
                          const std::string& source) {
  if (!s.empty() && s[0] == '-') {
    // Distinguish a signed number from garbage.
    double ignored = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), ignored);
    if (ec == std::errc() && ptr == s.data() + s.size()) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": column " + column +
                                " must be nonnegative",
                            row);
    }
  }
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(source + ": row " + std::to_string(row) + ": column " + column +
                         " is not a nonnegative integer: '" + s + "'",
                     row);
  }
  return v;
}

Date parse_date(const std::string& s, long row, const std::string& source) {
  try {
    return Date::parse(s);
  } catch (const ParseError& e) {
    throw ParseError(source + ": row " + std::to_string(row) + ": " + e.what(), row);
  }
}

const std::vector<std::string> kUsageColumns = {"Date",         "app_name",     "model_name",
                                                "model_usage_token", "output_speed",
                                                "time_to_first_token"};
const std::vector<std::string> kPerformanceColumns = {
    "Date", "model_name", "total_token_usage_M", "output_speed", "time_to_first_token"};

}  // namespace

std::vector<UsageRecord> parse_usage_csv(const std::string& text, const std::string& source) {
  const auto t = read_table(text, kUsageColumns, source);
  std::vector<UsageRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& f = t.rows[k];
    const long row = t.row_numbers[k];
    UsageRecord r;
    r.date = parse_date(f[0], row, source);
    r.app = f[1];
    r.model = f[2];
    if (r.app.empty() || r.model.empty()) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": empty name", row);
    }
    r.tokens = parse_count(f[3], "model_usage_token", row, source);
    r.output_speed = parse_decimal(f[4], "output_speed", row, source);
    r.time_to_first_token = parse_decimal(f[5], "time_to_first_token", row, source);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PerformanceRecord> parse_performance_csv(const std::string& text,
                                                     const std::string& source) {
  const auto t = read_table(text, kPerformanceColumns, source);
  std::vector<PerformanceRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& f = t.rows[k];
    const long row = t.row_numbers[k];
    PerformanceRecord r;
    r.date = parse_date(f[0], row, source);
    r.model = f[1];
    if (r.model.empty()) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": empty name", row);
    }
    r.usage_millions = parse_decimal(f[2], "total_token_usage_M", row, source);
    r.output_speed = parse_decimal(f[3], "output_speed", row, source);
    r.time_to_first_token = parse_decimal(f[4], "time_to_first_token", row, source);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<UsageRecord> load_usage_csv(const std::string& path) {
  return parse_usage_csv(read_file(path), path);
}

std::vector<PerformanceRecord> load_performance_csv(const std::string& path) {
  return parse_performance_csv(read_file(path), path);
}

BuiltMarket build_market(const std::vector<UsageRecord>& usage,
                         const std::vector<PerformanceRecord>& performance,
                         const DateRange& range, const std::string& target_model,
                         const std::map<std::string, double>& prices,
                         const MarketBuildOptions& options) {
  if (range.last < range.first) throw ArgumentError("build_market: empty date range");
  if (!(options.min_share_of_top_app >= 0.0)) {
    throw ArgumentError("build_market: min_share_of_top_app must be >= 0");
  }

  struct ModelStats {
    double total_millions = 0.0;
    double speed_sum = 0.0;
    double ttft_sum = 0.0;
    int count = 0;
  };
  std::map<std::string, ModelStats> models;
  std::set<Date> dates;
  for (const auto& r : performance) {
    if (!range.contains(r.date)) continue;
    auto& s = models[r.model];
    s.total_millions += r.usage_millions;
    s.speed_sum += r.output_speed;
    s.ttft_sum += r.time_to_first_token;
    ++s.count;
    dates.insert(r.date);
  }
  if (!models.count(target_model)) {
    throw NotFoundError("target model '" + target_model + "' has no performance records in " +
                        range.first.str() + ".." + range.last.str());
  }

  // Column order: rivals by name, target last.
  std::vector<std::string> model_names;
  for (const auto& [name, s] : models) {
    if (name != target_model) model_names.push_back(name);
  }
  model_names.push_back(target_model);
  std::map<std::string, int> model_index;
  for (std::size_t j = 0; j < model_names.size(); ++j) model_index[model_names[j]] = static_cast<int>(j);
  const int m = static_cast<int>(model_names.size());

  // Per (app, model) totals over the range.
  struct PairStats {
    double tokens = 0.0;
    double ttft_sum = 0.0;
    int count = 0;
  };
  std::map<std::string, std::map<int, PairStats>> pairs;
  for (const auto& r : usage) {
    if (!range.contains(r.date)) continue;
    const auto it = model_index.find(r.model);
    if (it == model_index.end()) continue;  // no capacity data for this model
    auto& p = pairs[r.app][it->second];
    p.tokens += static_cast<double>(r.tokens);
    p.ttft_sum += r.time_to_first_token;
    ++p.count;
    dates.insert(r.date);
  }

  std::vector<double> top(m, 0.0);
  for (const auto& [app, per_model] : pairs) {
    for (const auto& [j, p] : per_model) top[j] = std::max(top[j], p.tokens);
  }
  auto survives = [&](const PairStats& p, int j) {
    return p.tokens > 0.0 && p.tokens >= options.min_share_of_top_app * top[j];
  };

  std::vector<std::string> apps;
  for (const auto& [app, per_model] : pairs) {
    const bool keep = std::any_of(per_model.begin(), per_model.end(),
                                  [&](const auto& kv) { return survives(kv.second, kv.first); });
    if (keep) apps.push_back(app);
  }
  std::map<std::string, int> app_index;
  for (std::size_t i = 0; i < apps.size(); ++i) app_index[apps[i]] = static_cast<int>(i);
  const int n = static_cast<int>(apps.size());

  Eigen::VectorXd price_vec(m), capacity(m), model_ttft(m);
  std::vector<Provider> providers(m);
  for (int j = 0; j < m; ++j) {
    const auto& name = model_names[j];
    const auto& s = models.at(name);
    const double speed = s.speed_sum / s.count;
    if (!(speed > 0.0)) {
      throw DegenerateError("model '" + name + "' has zero mean output speed; capacity undefined");
    }
    if (!(s.total_millions > 0.0)) {
      throw DegenerateError("model '" + name + "' has zero total usage; capacity undefined");
    }
    const auto pit = prices.find(name);
    if (pit == prices.end()) throw NotFoundError("no price given for model '" + name + "'");
    price_vec[j] = pit->second;
    capacity[j] = s.total_millions / speed;
    model_ttft[j] = s.ttft_sum / s.count;
    providers[j] = Provider{name, pit->second, capacity[j], 0.0, name == target_model};
  }

  Eigen::MatrixXd delays(n, m);
  for (int i = 0; i < n; ++i) {
    const auto& per_model = pairs.at(apps[i]);
    for (int j = 0; j < m; ++j) {
      const auto it = per_model.find(j);
      delays(i, j) = (it != per_model.end() && it->second.count > 0)
                         ? it->second.ttft_sum / it->second.count
                         : model_ttft[j];
    }
  }

  std::vector<ObservedDay> days;
  Eigen::VectorXd mean_demand = Eigen::VectorXd::Zero(n);
  for (const auto& date : dates) {
    FlowMatrix flows = FlowMatrix::Zero(n, m);
    for (const auto& r : usage) {
      if (!(r.date == date)) continue;
      const auto a = app_index.find(r.app);
      const auto mj = model_index.find(r.model);
      if (a == app_index.end() || mj == model_index.end()) continue;
      if (!survives(pairs.at(r.app).at(mj->second), mj->second)) continue;
      flows(a->second, mj->second) += static_cast<double>(r.tokens) * 1e-6;
    }
    Eigen::VectorXd demands = flows.rowwise().sum();
    mean_demand += demands;
    days.push_back(make_observed_day(date, std::move(flows), std::move(demands), price_vec,
                                     capacity, delays));
  }
  if (!days.empty()) mean_demand /= static_cast<double>(days.size());

  std::vector<UserGroup> users(n);
  for (int i = 0; i < n; ++i) {
    users[i].id = apps[i];
    users[i].demand = mean_demand[i];
    users[i].delays.resize(m);
    for (int j = 0; j < m; ++j) users[i].delays[j] = delays(i, j);
  }
  double cap = options.price_cap;
  if (cap <= 0.0) cap = std::max(1e-9, 2.0 * price_vec.maxCoeff());
  Market market(std::move(providers), std::move(users), PreferenceParams{1.0, 1.0, 1.0, {}}, cap);
  return BuiltMarket{std::move(market), std::move(days)};
}

}  // namespace llmprice
