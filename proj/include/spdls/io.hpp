#pragma once

// Run configuration files and manifests. The format is line based:
//
//   # comment
//   [section]
//   key = value
//
// Keys before the first section header belong to the unnamed section "".
// Lists are comma separated. Reals are written with 17 significant digits
// so that parse(serialize(c)) == c.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "spdls/data.hpp"
#include "spdls/errors.hpp"
#include "spdls/geometry.hpp"
#include "spdls/rng.hpp"

namespace spdls {

inline constexpr const char* kArtifactVersion = "1.0.0";

class Config {
 public:
  using Section = std::map<std::string, std::string>;

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  void set(const std::string& section, const std::string& key, std::string value) {
    check_key(key);
    if (value.find('\n') != std::string::npos) throw InvalidInput("config value for '" + key + "' spans lines");
    sections_[section][key] = detail::trim(value);
  }
  void set_real(const std::string& section, const std::string& key, double v) {
    set(section, key, detail::format_real(v));
  }
  template <typename T>
  void set_list(const std::string& section, const std::string& key, const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out += ", ";
      if constexpr (std::is_floating_point_v<T>) {
        out += detail::format_real(values[i]);
      } else {
        out += std::to_string(values[i]);
      }
    }
    set(section, key, out);
  }

  const std::string& get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end() || !s->second.count(key)) {
      throw InvalidInput("missing config key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
    }
    return s->second.at(key);
  }

  double get_real(const std::string& section, const std::string& key) const {
    double v = 0.0;
    if (!detail::parse_double(get(section, key), v)) throw bad_value(section, key, "a real number");
    return v;
  }

  long get_int(const std::string& section, const std::string& key) const {
    const std::string& s = get(section, key);
    long v = 0;
    const char* first = s.data();
    const auto [ptr, ec] = std::from_chars(first, first + s.size(), v);
    if (ec != std::errc() || ptr != first + s.size()) throw bad_value(section, key, "an integer");
    return v;
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key) const {
    const std::string& s = get(section, key);
    std::uint64_t v = 0;
    const char* first = s.data();
    const auto [ptr, ec] = std::from_chars(first, first + s.size(), v);
    if (ec != std::errc() || ptr != first + s.size()) throw bad_value(section, key, "an unsigned integer");
    return v;
  }

  bool get_bool(const std::string& section, const std::string& key) const {
    const std::string& s = get(section, key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw bad_value(section, key, "true or false");
  }

  std::vector<double> get_reals(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get(section, key))) {
      double v = 0.0;
      if (!detail::parse_double(item, v)) throw bad_value(section, key, "a list of reals");
      out.push_back(v);
    }
    return out;
  }

  std::vector<long> get_ints(const std::string& section, const std::string& key) const {
    std::vector<long> out;
    for (const auto& item : split_list(get(section, key))) {
      long v = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || ptr != item.data() + item.size()) throw bad_value(section, key, "a list of integers");
      out.push_back(v);
    }
    return out;
  }

  const std::map<std::string, Section>& sections() const { return sections_; }

  /// Copies every key of `other` into this config, replacing existing values.
  void merge(const Config& other) {
    for (const auto& [name, sec] : other.sections_)
      for (const auto& [k, v] : sec) sections_[name][k] = v;
  }

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, Section> sections_;

  static void check_key(const std::string& key) {
    if (key.empty() || key.find_first_of("=[]#\n \t") != std::string::npos) {
      throw InvalidInput("invalid config key '" + key + "'");
    }
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (detail::trim(s).empty()) return out;
    for (auto& item : detail::split_csv_line(s)) out.push_back(item);
    return out;
  }

  static InvalidInput bad_value(const std::string& section, const std::string& key, const std::string& what) {
    return InvalidInput("config key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]") +
                        " must be " + what);
  }
};

inline Config parse_config(std::istream& is, const std::string& source = "<config>") {
  Config cfg;
  std::string line;
  std::string section;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw InvalidInput(source + ": line " + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput(source + ": line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(section, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const InvalidInput& e) {
      throw InvalidInput(source + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline Config read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path);
  return parse_config(in, path);
}

inline void write_config(std::ostream& os, const Config& cfg) {
  bool first = true;
  for (const auto& [name, sec] : cfg.sections()) {
    if (!first) os << '\n';
    first = false;
    if (!name.empty()) os << '[' << name << "]\n";
    for (const auto& [k, v] : sec) os << k << " = " << v << '\n';
  }
}

inline std::string serialize_config(const Config& cfg) {
  std::ostringstream os;
  write_config(os, cfg);
  return os.str();
}

/// Writes `run.manifest` into `dir`: the effective configuration plus a
/// [run] section with command, seed, version and wall time. Passing the
/// manifest back through --config reproduces the run.
inline std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::string& command,
                                            const Config& effective, RngSeed seed, double wall_seconds) {
  Config m = effective;
  m.set("run", "command", command);
  m.set("run", "seed", std::to_string(seed.value));
  m.set("run", "version", kArtifactVersion);
  m.set_real("run", "wall_time_s", wall_seconds);
  const auto path = dir / "run.manifest";
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  write_config(out, m);
  return path;
}

/// Creates `dir` (and parents) if needed.
inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw InvalidInput("cannot create output directory " + dir.string());
  }
}

/// Whitespace-separated reals (one observation vector).
inline Vector read_vector(std::istream& is, const std::string& source = "<vector>") {
  std::vector<double> vals;
  std::string tok;
  while (is >> tok) {
    double v = 0.0;
    if (!detail::parse_double(tok, v) || !std::isfinite(v)) {
      throw InvalidInput(source + ": entry " + std::to_string(vals.size() + 1) + " ('" + tok + "') is not a finite number");
    }
    vals.push_back(v);
  }
  return Eigen::Map<Vector>(vals.data(), long(vals.size()));
}

/// One row per line, entries separated by spaces, 17 significant digits.
inline void write_matrix(std::ostream& os, const Matrix& a) {
  for (long i = 0; i < a.rows(); ++i) {
    for (long j = 0; j < a.cols(); ++j) os << (j ? " " : "") << detail::format_real(a(i, j));
    os << '\n';
  }
}

/// Rows of whitespace-separated reals; every row must have the same length.
inline Matrix read_matrix(std::istream& is, const std::string& source = "<matrix>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      if (!detail::parse_double(tok, v) || !std::isfinite(v)) {
        throw InvalidInput(source + ": line " + std::to_string(lineno) + ": '" + tok + "' is not a finite number");
      }
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InvalidInput(source + ": line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                         " entries, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput(source + ": empty matrix");
  Matrix a(long(rows.size()), long(rows.front().size()));
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j) a(i, j) = rows[std::size_t(i)][std::size_t(j)];
  return a;
}

}  // namespace spdls
