#pragma once

// Internal helpers for delimiter-separated text.

#include <string>
#include <string_view>
#include <vector>

namespace qualsynth::detail {

std::vector<std::string_view> split(std::string_view line, char delim);
std::string_view trim(std::string_view s);
/// Parses a finite or non-finite double; returns false on malformed text.
bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, int& out);
/// Shortest decimal text that reads back to exactly the same double.
std::string format_double(double v);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace qualsynth::detail
