#include "splitsmc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace splitsmc {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

double to_double(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw InvalidInput("config: key '" + key + "' is not a number: '" + s + "'");
  return v;
}

long to_long(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw InvalidInput("config: key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput("config: line " + std::to_string(line_no) +
                         " has no '=': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw InvalidInput("config: empty key at line " + std::to_string(line_no));
    if (cfg.values_.count(key))
      throw InvalidInput("config: duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

std::uint64_t KeyValueConfig::hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : serialize()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidInput("config: missing key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const { return raw(key); }

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  consumed_.insert(key);
  return has(key) ? values_.at(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  return to_double(raw(key), key);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  consumed_.insert(key);
  return has(key) ? to_double(values_.at(key), key) : fallback;
}

long KeyValueConfig::get_long(const std::string& key) const {
  return to_long(raw(key), key);
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  consumed_.insert(key);
  return has(key) ? to_long(values_.at(key), key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  consumed_.insert(key);
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config: key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(raw(key))) out.push_back(to_double(s, key));
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(
    const std::string& key, const std::vector<double>& fallback) const {
  consumed_.insert(key);
  return has(key) ? get_double_list(key) : fallback;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& s : split_list(raw(key)))
    out.push_back(static_cast<int>(to_long(s, key)));
  return out;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
  consumed_.insert(key);
  return has(key) ? get_int_list(key) : fallback;
}

std::vector<std::uint64_t> KeyValueConfig::get_seed_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(raw(key)))
    out.push_back(static_cast<std::uint64_t>(to_long(s, key)));
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void KeyValueConfig::assert_fully_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (!consumed_.count(k)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += k;
    }
  }
  if (!unknown.empty())
    throw InvalidInput("config: unknown field(s): " + unknown);
}

}  // namespace splitsmc
