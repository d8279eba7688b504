#pragma once

#include <map>
#include <string>
#include <vector>

namespace diffcod {

/// Flat key=value configuration text. Keys are ordered for stable output.
using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Throws ConfigError on
/// malformed lines, naming the line number.
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

// Typed coercions; each throws ConfigError naming `key` on a bad value.
long parse_integer(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);
bool parse_flag(const std::string& key, const std::string& value);
/// Comma-separated integers.
std::vector<int> parse_int_list(const std::string& key, const std::string& value);

std::string format_real(double v);
std::string format_int_list(const std::vector<int>& values);

}  // namespace diffcod
