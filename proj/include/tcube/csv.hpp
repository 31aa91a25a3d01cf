#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tcube::csv {

struct Record {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

// RFC-4180: quoted fields may contain commas, doubled quotes and line breaks.
// Accepts LF or CRLF line endings; blank lines are skipped.
std::vector<Record> parse(std::string_view text);

std::string quote(std::string_view field);

}  // namespace tcube::csv
