#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace gv {

struct KeyValue {
  std::string key;
  std::string value;
  bool operator==(const KeyValue&) const = default;
};

// Line-oriented `key = value` text. Blank lines and lines starting with '#'
// are ignored; anything else without '=' or with an empty key is a
// ConfigError naming the source and line. Later duplicates win when the
// result is applied in order.
std::vector<KeyValue> parse_key_values(std::istream& in, const std::string& source);
std::vector<KeyValue> read_key_value_file(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const std::vector<KeyValue>& entries);
void write_key_value_file(const std::filesystem::path& path, const std::vector<KeyValue>& entries);

// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

// Value of `key`, or ConfigError if absent.
const std::string& require_value(const std::vector<KeyValue>& entries, const std::string& key);

}  // namespace gv
