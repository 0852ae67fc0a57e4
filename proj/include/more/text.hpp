#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace more {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);

/// Strict parse of the whole trimmed string; finite values only.
std::optional<double> parse_number(std::string_view text);

std::string_view trim(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);

/// Round to `digits` significant decimal digits.
double round_significant(double value, int digits);

}  // namespace more
