// Small CSV helpers shared by the file readers and writers.

#ifndef ALIGAN_CSV_UTIL_HPP
#define ALIGAN_CSV_UTIL_HPP

#include "aligan/core.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace aligan::detail {

// Shortest form that round-trips a double exactly.
inline std::string format_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Like format_real, but NaN becomes an empty field.
inline std::string format_optional(Real v) { return std::isnan(v) ? std::string() : format_real(v); }

[[noreturn]] inline void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  std::ostringstream s;
  s << path.string() << ':' << line << ": " << what;
  throw DataError(s.str());
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Real parse_real(const std::string& field, const std::filesystem::path& path, std::size_t line) {
  if (field.empty()) fail(path, line, "empty numeric field");
  char* end = nullptr;
  const Real v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size()) fail(path, line, "not a number: '" + field + "'");
  if (!std::isfinite(v)) fail(path, line, "non-finite value: '" + field + "'");
  return v;
}

inline Real parse_optional(const std::string& field, const std::filesystem::path& path, std::size_t line) {
  return field.empty() ? std::numeric_limits<Real>::quiet_NaN() : parse_real(field, path, line);
}

inline long long parse_int(const std::string& field, const std::filesystem::path& path, std::size_t line) {
  if (field.empty()) fail(path, line, "empty integer field");
  char* end = nullptr;
  const long long v = std::strtoll(field.c_str(), &end, 10);
  if (end != field.c_str() + field.size()) fail(path, line, "not an integer: '" + field + "'");
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::string>> rows;  // 1-based line number, text
};

// Reads an optional schema line (when `version` is non-null), the header and
// all nonempty data lines.
inline CsvFile read_csv(const std::filesystem::path& path, const char* version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  CsvFile f;
  std::string line;
  std::size_t n = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (version != nullptr && (!next() || line != version))
    fail(path, 1, std::string("expected schema line '") + version + "'");
  if (!next()) fail(path, n + 1, "missing header");
  f.header = split_fields(line);
  while (next()) {
    if (line.empty()) continue;
    f.rows.emplace_back(n, line);
  }
  return f;
}

inline void expect_header(const CsvFile& f, const std::vector<std::string>& expected, const std::filesystem::path& path,
                          std::size_t header_line) {
  if (f.header != expected) {
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    fail(path, header_line, "header mismatch, expected '" + want + "'");
  }
}

}  // namespace aligan::detail

#endif  // ALIGAN_CSV_UTIL_HPP
