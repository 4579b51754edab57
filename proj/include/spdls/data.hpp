#pragma once

// Observation matrices read from CSV and the covariance / correlation
// targets built from them.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "spdls/errors.hpp"
#include "spdls/symmat.hpp"

namespace spdls {

struct DataMatrix {
  Matrix rows;  ///< N x m, one observation per row
  std::string source;
  bool standardized = false;

  long n_obs() const { return rows.rows(); }
  long dim_m() const { return rows.cols(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(trim(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  out.push_back(trim(cell));
  return out;
}

/// Dot-decimal parse independent of the global locale.
inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

/// Rectangular numeric CSV; a first row containing any non-numeric cell is
/// taken as a header. Row and column numbers in errors are 1-based data
/// coordinates (the header, if present, is not counted).
inline DataMatrix parse_csv(std::istream& is, const std::string& source = "<stream>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  long width = -1;
  bool first = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    std::vector<double> vals(cells.size());
    long bad = -1;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!detail::parse_double(cells[j], vals[j]) || !std::isfinite(vals[j])) {
        bad = long(j);
        break;
      }
    }
    if (first) {
      first = false;
      if (bad >= 0) {
        width = long(cells.size());
        continue;
      }
    }
    if (width >= 0 && long(cells.size()) != width) {
      throw InvalidInput(source + ": line " + std::to_string(lineno) + " has " +
                         std::to_string(cells.size()) + " fields, expected " + std::to_string(width));
    }
    width = long(cells.size());
    if (bad >= 0) {
      throw InvalidInput(source + ": non-numeric value '" + cells[std::size_t(bad)] + "' at row " +
                         std::to_string(rows.size() + 1) + ", column " + std::to_string(bad + 1));
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw InvalidInput(source + ": no data rows");
  DataMatrix d;
  d.source = source;
  d.rows.resize(long(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (long j = 0; j < width; ++j) d.rows(long(i), j) = rows[i][std::size_t(j)];
  return d;
}

inline DataMatrix ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  return parse_csv(in, path);
}

enum class CovMode { Covariance, Correlation };

/// (1/N) sum (z_i - zbar)(z_i - zbar)^T, or its unit-diagonal rescaling.
inline SymMat sample_covariance(const DataMatrix& data, CovMode mode) {
  const long n = data.n_obs();
  if (n < 1) throw InvalidInput("sample_covariance: no observations");
  if (mode == CovMode::Correlation && n < 2) {
    throw InvalidInput("sample_covariance: correlation needs at least 2 observations");
  }
  const Vector mean = data.rows.colwise().mean().transpose();
  const Matrix centered = data.rows.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / double(n);
  if (mode == CovMode::Correlation) {
    Vector inv_sd(cov.rows());
    for (long j = 0; j < cov.rows(); ++j) {
      if (!(cov(j, j) > 0)) {
        throw InvalidInput("sample_covariance: column " + std::to_string(j + 1) +
                           " has zero variance");
      }
      inv_sd(j) = 1.0 / std::sqrt(cov(j, j));
    }
    cov = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    cov.diagonal().setOnes();
  }
  return SymMat(cov);
}

}  // namespace spdls
