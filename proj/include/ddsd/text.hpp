#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small parsing/formatting helpers shared by the file formats.

namespace ddsd {

void split_whitespace(std::string_view line, std::vector<std::string_view>& out);
std::vector<std::string> split_tokens(std::string_view field);
std::vector<std::string_view> split_char(std::string_view line, char sep);
std::string join(const std::vector<std::string>& tokens, char sep = ' ');

bool parse_double(std::string_view s, double& out);
bool parse_count(std::string_view s, std::size_t& out);

// Shortest decimal that parses back to exactly the same double.
std::string format_double(double v);
// Fixed-point with the given number of decimals ('.' separator, locale-free).
std::string format_fixed(double v, int decimals);

}  // namespace ddsd
