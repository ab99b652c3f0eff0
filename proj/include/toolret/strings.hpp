#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace toolret {

// Shortest representation that parses back to the same double.
std::string fmt_double(double v);

std::string trim(std::string_view s);

// Whitespace-delimited fields, any run of spaces/tabs as separator.
std::vector<std::string> split_fields(std::string_view line);

// Strict base-10 integer; the whole string must be consumed.
bool parse_int_strict(std::string_view s, long long& out);

}  // namespace toolret
