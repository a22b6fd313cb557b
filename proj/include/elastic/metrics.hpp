#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "elastic/error.hpp"
#include "elastic/linalg.hpp"

namespace elastic {

// One learning-curve sample. worker_id == -1 marks a center row.
struct MetricsRow {
  double wall_clock_s = 0.0;
  double sim_time = 0.0;
  std::uint64_t center_version = 0;
  long worker_id = -1;
  double objective = 0.0;
  std::optional<double> dist_to_opt;
  std::optional<double> disagreement;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader =
    "wall_clock_s,sim_time,center_version,worker_id,objective,dist_to_opt,disagreement";

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  // integers print as integers ("10", not "1e+01")
  if (std::strchr(buf, 'e') != nullptr && v == std::trunc(v) && std::fabs(v) < 1e17)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

inline std::string format_metrics_row(const MetricsRow& r) {
  std::string out = format_double(r.wall_clock_s);
  out += ',';
  out += format_double(r.sim_time);
  out += ',';
  out += std::to_string(r.center_version);
  out += ',';
  out += std::to_string(r.worker_id);
  out += ',';
  out += format_double(r.objective);
  out += ',';
  if (r.dist_to_opt) out += format_double(*r.dist_to_opt);
  out += ',';
  if (r.disagreement) out += format_double(*r.disagreement);
  return out;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

inline double parse_double_cell(const std::string& cell, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + cell + "'", line);
  }
  if (used != cell.size()) throw ParseError("not a number: '" + cell + "'", line);
  return v;
}

template <class Int>
Int parse_int_cell(const std::string& cell, std::size_t line) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(cell, &used);
  } catch (const std::exception&) {
    throw ParseError("not an integer: '" + cell + "'", line);
  }
  if (used != cell.size()) throw ParseError("not an integer: '" + cell + "'", line);
  return static_cast<Int>(v);
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("metrics csv: missing header", lineno);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ParseError("metrics csv: unexpected header", lineno);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 7) throw ParseError("metrics csv: expected 7 cells", lineno);
    MetricsRow r;
    r.wall_clock_s = detail::parse_double_cell(c[0], lineno);
    r.sim_time = detail::parse_double_cell(c[1], lineno);
    r.center_version = detail::parse_int_cell<std::uint64_t>(c[2], lineno);
    r.worker_id = detail::parse_int_cell<long>(c[3], lineno);
    r.objective = detail::parse_double_cell(c[4], lineno);
    if (!c[5].empty()) r.dist_to_opt = detail::parse_double_cell(c[5], lineno);
    if (!c[6].empty()) r.disagreement = detail::parse_double_cell(c[6], lineno);
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file '" + path + "'");
  return read_metrics_csv(in);
}

// (1/p) sum_i |x_i - mean|^2
inline double disagreement(const std::vector<ParamVector>& xs) {
  if (xs.empty()) return 0.0;
  const std::size_t d = xs.front().dim();
  ParamVector mean(d);
  for (const auto& x : xs) {
    detail::require_same_dim(x.dim(), d, "disagreement");
    for (std::size_t k = 0; k < d; ++k) mean[k] += x[k];
  }
  const double p = static_cast<double>(xs.size());
  for (std::size_t k = 0; k < d; ++k) mean[k] /= p;
  double s = 0.0;
  for (const auto& x : xs)
    for (std::size_t k = 0; k < d; ++k) s += (x[k] - mean[k]) * (x[k] - mean[k]);
  return s / p;
}

// Mean of the snapshots left after dropping the leading burn_in fraction
// (at least one snapshot is always kept).
inline ParamVector averaged_iterate(const std::vector<ParamVector>& snapshots,
                                    double burn_in = 0.5) {
  if (snapshots.empty()) throw ConfigError("averaged_iterate: no snapshots");
  if (!(burn_in >= 0.0 && burn_in < 1.0))
    throw ConfigError("averaged_iterate: burn_in must be in [0, 1)");
  const std::size_t k = snapshots.size();
  std::size_t skip = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(k)));
  if (skip >= k) skip = k - 1;
  const std::size_t d = snapshots.front().dim();
  ParamVector sum(d);
  for (std::size_t i = skip; i < k; ++i) {
    detail::require_same_dim(snapshots[i].dim(), d, "averaged_iterate");
    for (std::size_t j = 0; j < d; ++j) sum[j] += snapshots[i][j];
  }
  const double count = static_cast<double>(k - skip);
  for (std::size_t j = 0; j < d; ++j) sum[j] /= count;
  return sum;
}

}  // namespace elastic
