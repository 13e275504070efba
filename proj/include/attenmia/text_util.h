#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace attenmia {

// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_double(double v);

// Quotes a CSV field when it contains a comma, quote, or newline.
std::string csv_field(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view text);
std::string to_lower_ascii(std::string_view text);

}  // namespace attenmia
