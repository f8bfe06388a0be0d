#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace imgconf::csv {

// Shortest decimal representation that round-trips through strtod.
std::string format_double(double v);

std::vector<std::string> split(std::string_view line, char delim = ',');

double parse_double(std::string_view field, std::string_view what);
long long parse_int(std::string_view field, std::string_view what);

}  // namespace imgconf::csv
