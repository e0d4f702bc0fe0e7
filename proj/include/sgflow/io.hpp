#pragma once

// CSV and JSON emission with full-precision doubles, and run metadata.

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgflow/errors.hpp"
#include "sgflow/risk.hpp"
#include "sgflow/simulate.hpp"

#ifndef SGFLOW_GIT_DESCRIBE
#define SGFLOW_GIT_DESCRIBE "unknown"
#endif

namespace sgflow {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// %.17g; non-finite values as inf, -inf, nan.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  // strtod rather than stod: stod rejects subnormal values.
  if (s.empty() || std::isspace(static_cast<unsigned char>(s.front())))
    throw IoError("csv: cannot parse '" + s + "' as a number");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw IoError("csv: cannot parse '" + s + "' as a number");
  if (*end != '\0') throw IoError("csv: trailing characters in '" + s + "'");
  return v;
}

/// Column-oriented numeric table.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw IoError("table: no column '" + name + "'");
  }

  std::vector<double> column(const std::string& name) const {
    const std::size_t c = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline std::string to_csv(const Table& table) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.columns.size(); ++i) os << (i ? "," : "") << table.columns[i];
  os << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw IoError("csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << '\n';
  }
  return os.str();
}

inline Table parse_csv(const std::string& text) {
  Table table;
  std::istringstream is(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(is, line)) throw IoError("csv: empty input");
  table.columns = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != table.columns.size()) throw IoError("csv: ragged row");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_csv(const std::filesystem::path& path, const Table& table) { write_text(path, to_csv(table)); }
inline Table read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

/// t, lambda, bias_sq, variance, risk, then the curve's components in order.
inline Table risk_curve_table(const RiskCurve& curve) {
  Table table;
  table.columns = {"t", "lambda", "bias_sq", "variance", "risk"};
  for (const auto& [name, values] : curve.components) {
    if (values.size() != curve.size()) throw IoError("risk curve: component '" + name + "' has wrong length");
    table.columns.push_back(name);
  }
  const auto lambda = curve.lambda();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::vector<double> row = {curve.t[i], lambda[i], curve.bias_sq[i], curve.variance[i], curve.risk[i]};
    for (const auto& comp : curve.components) row.push_back(comp.second[i]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// iter, t_effective, beta_1..beta_p.
inline Table trajectory_table(const Trajectory& traj) {
  Table table;
  table.columns = {"iter", "t_effective"};
  for (Eigen::Index j = 0; j < traj.states.cols(); ++j) table.columns.push_back("beta_" + std::to_string(j + 1));
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
    std::vector<double> row = {static_cast<double>(k), traj.effective_time(k)};
    for (Eigen::Index j = 0; j < traj.states.cols(); ++j) row.push_back(traj.states(k, j));
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// {git_describe, config_hash, seed}; no timestamps, so output is reproducible.
inline nlohmann::json run_metadata(const nlohmann::json& config, std::uint64_t seed) {
  return {{"git_describe", SGFLOW_GIT_DESCRIBE}, {"config_hash", hex64(fnv1a(config.dump()))}, {"seed", seed}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

}  // namespace sgflow
