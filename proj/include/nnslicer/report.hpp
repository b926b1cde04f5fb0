#pragma once

// Result tables written as CSV with a JSON mirror (an array of row objects with
// the same field names and values).

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace nnslicer {

using Cell = std::variant<std::string, double, std::int64_t>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw std::invalid_argument("row width does not match the table header");
    rows.push_back(std::move(row));
  }
};

// The (metric, value) layout used by every subcommand summary.
inline Table metric_table() { return Table{{"metric", "value"}, {}}; }

// (x, y) plot series.
inline Table series_table(std::string x = "x", std::string y = "y") { return Table{{std::move(x), std::move(y)}, {}}; }

namespace detail {

inline std::string format_cell(const Cell& c) {
  if (auto s = std::get_if<std::string>(&c)) {
    if (s->find_first_of(",\"\n") == std::string::npos) return *s;
    std::string q = "\"";
    for (char ch : *s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  }
  if (auto i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  std::ostringstream os;
  os << std::setprecision(10) << std::get<double>(c);
  return os.str();
}

inline nlohmann::ordered_json json_cell(const Cell& c) {
  if (auto s = std::get_if<std::string>(&c)) return *s;
  if (auto i = std::get_if<std::int64_t>(&c)) return *i;
  double d = std::get<double>(c);
  if (!std::isfinite(d)) return nullptr;
  return d;
}

}  // namespace detail

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + detail::format_cell(t.columns[i]);
  out += "\n";
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + detail::format_cell(r[i]);
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Table& t) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json o;
    for (std::size_t i = 0; i < r.size(); ++i) o[t.columns[i]] = detail::json_cell(r[i]);
    arr.push_back(std::move(o));
  }
  return arr;
}

// Writes <stem>.csv and <stem>.json.
inline void write_table(const Table& t, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto put = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << s;
    if (!f) throw std::runtime_error("write failed: " + p.string());
  };
  put(std::filesystem::path(stem).concat(".csv"), to_csv(t));
  put(std::filesystem::path(stem).concat(".json"), to_json(t).dump(2) + "\n");
}

}  // namespace nnslicer
