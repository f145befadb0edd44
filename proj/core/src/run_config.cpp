#include "gv/run_config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "gv/error.hpp"

namespace gv {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::istream& in, const std::string& source) {
  std::vector<KeyValue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    KeyValue kv{trim(body.substr(0, eq)), trim(body.substr(eq + 1))};
    if (kv.key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_key_values(in, path.string());
}

void write_key_values(std::ostream& out, const std::vector<KeyValue>& entries) {
  for (const auto& kv : entries) out << kv.key << " = " << kv.value << '\n';
}

void write_key_value_file(const std::filesystem::path& path, const std::vector<KeyValue>& entries) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_key_values(out, entries);
}

const std::string& require_value(const std::vector<KeyValue>& entries, const std::string& key) {
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
    if (it->key == key) return it->value;
  throw ConfigError("missing key '" + key + "'");
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general);
  return std::string(buf, res.ptr);
}

}  // namespace gv
