#include "kinadapt/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "kinadapt/error.hpp"

namespace kinadapt::csv {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<Row> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  std::vector<Row> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    rows.push_back(Row{n, split(line)});
  }
  return rows;
}

double parse_double(std::string_view cell, const std::string& context) {
  const auto s = trim(cell);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(context + ": non-numeric cell '" + std::string(cell) + "'");
  }
  if (!std::isfinite(v)) throw DataError(context + ": non-finite value '" + std::string(cell) + "'");
  return v;
}

long long parse_int(std::string_view cell, const std::string& context) {
  const auto s = trim(cell);
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(context + ": expected integer, got '" + std::string(cell) + "'");
  }
  return v;
}

std::string format(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace kinadapt::csv
