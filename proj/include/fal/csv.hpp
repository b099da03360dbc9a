// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "fal/error.hpp"

namespace fal {

std::vector<std::string_view> split(std::string_view line, char sep);

/// Shortest decimal form that parses back to the same double; "inf", "-inf", "nan" otherwise.
std::string format_double(double v);
double parse_double(std::string_view cell, const std::string& where);

template <typename T>
T parse_number(std::string_view cell, const std::string& where) {
  T value{};
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end || cell.empty()) {
    throw ValidationError(where + ": non-numeric cell '" + std::string(cell) + "'");
  }
  return value;
}

}  // namespace fal
