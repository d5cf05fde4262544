#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssnocc {

// RFC 4180 table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or npos.
  std::size_t find(std::string_view name) const;
  // Index of a required header column; throws DataError naming the source.
  std::size_t require(std::string_view name, std::string_view source) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

CsvTable parse_csv(std::string_view text, std::string_view source = "<memory>");
CsvTable read_csv(const std::filesystem::path& path);

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, std::span<const std::string> fields);

// %.{digits}g formatting; non-finite values as nan / inf / -inf.
std::string format_double(double v, int significant_digits);
double parse_double(std::string_view field, std::string_view what);
long parse_long(std::string_view field, std::string_view what);

}  // namespace ssnocc
