#include "csv.hpp"

#include "tabshap/error.hpp"

namespace tabshap::detail {

std::vector<CsvRecord> parse_csv(std::string_view text) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string cell;
  bool in_quotes = false;
  bool record_has_content = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_cell = [&] {
    current.cells.push_back(std::move(cell));
    cell.clear();
  };
  auto end_record = [&] {
    if (record_has_content || !current.cells.empty() || !cell.empty()) {
      end_cell();
      records.push_back(std::move(current));
    }
    current = CsvRecord{};
    cell.clear();
    record_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        cell.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        record_has_content = true;
        break;
      case ',':
        record_has_content = true;
        end_cell();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        current.line = line;
        break;
      default:
        record_has_content = true;
        cell.push_back(c);
    }
  }
  if (in_quotes) {
    throw LoadError("unterminated quoted cell", current.line);
  }
  end_record();
  return records;
}

}  // namespace tabshap::detail
