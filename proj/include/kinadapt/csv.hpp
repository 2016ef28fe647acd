#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kinadapt::csv {

// Plain comma-separated rows; no quoting. Blank lines are skipped and
// reported line numbers are 1-based file lines.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> cells;
};

std::vector<Row> read_rows(const std::filesystem::path& path);
std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Throws DataError naming `context` on failure.
double parse_double(std::string_view cell, const std::string& context);
long long parse_int(std::string_view cell, const std::string& context);

// Shortest representation that round-trips.
std::string format(double v);

}  // namespace kinadapt::csv
