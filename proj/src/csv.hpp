#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace tabshap::detail {

struct CsvRecord {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> cells;
};

// RFC 4180 reader: comma separated, double-quoted cells with "" escapes,
// LF or CRLF line endings. Blank lines are skipped.
std::vector<CsvRecord> parse_csv(std::string_view text);

}  // namespace tabshap::detail
