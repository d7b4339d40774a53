#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reid::csv {

struct Record {
  std::size_t line_no = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

// RFC 4180 reader: quoted fields may contain commas, doubled quotes and line
// breaks. Blank lines and lines starting with '#' (outside quotes) are skipped.
// Returns std::nullopt with `error_line` set on an unterminated quote.
std::optional<std::vector<Record>> parse(std::string_view text, std::size_t* error_line = nullptr);

std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

}  // namespace reid::csv
