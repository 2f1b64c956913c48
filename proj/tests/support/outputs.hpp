#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace llmprice::testing {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// JSON with timing keys removed, re-dumped for byte comparison.
inline std::string without_timing_json(const std::string& text) {
  auto doc = nlohmann::ordered_json::parse(text);
  std::vector<nlohmann::ordered_json*> stack{&doc};
  while (!stack.empty()) {
    auto* j = stack.back();
    stack.pop_back();
    if (j->is_object()) {
      j->erase("wall_time");
      j->erase("solve_time");
      for (auto& [k, v] : j->items()) stack.push_back(&v);
    } else if (j->is_array()) {
      for (auto& v : *j) stack.push_back(&v);
    }
  }
  return doc.dump();
}

// CSV with any column named "time" dropped.
inline std::string without_timing_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  int drop = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t k = 0; k < cells.size(); ++k)
        if (cells[k] == "time" || cells[k] == "mean_time") drop = static_cast<int>(k);
      header = false;
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (static_cast<int>(k) == drop) continue;
      out += cells[k] + ",";
    }
    out += "\n";
  }
  return out;
}

// Every file in `dir`, timing stripped, keyed by file name.
inline std::string dir_fingerprint(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) {
    const auto text = read_text(f);
    out += f.filename().string() + "\n";
    if (f.extension() == ".json") out += without_timing_json(text);
    else if (f.extension() == ".csv") out += without_timing_csv(text);
    else out += text;
    out += "\n";
  }
  return out;
}

}  // namespace llmprice::testing
