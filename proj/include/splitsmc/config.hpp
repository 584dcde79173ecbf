// Strict key-value experiment configs.
//
// One `key = value` pair per line, `#` comments. Values are scalars or
// comma-separated lists. Parsing is strict in two ways: duplicate keys are
// rejected immediately, and any key never consumed by the experiment driver
// fails assert_fully_consumed(), so misspelled fields cannot pass silently.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "splitsmc/types.hpp"

namespace splitsmc {

class KeyValueConfig {
 public:
  static KeyValueConfig parse_string(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  // canonical form: sorted `key = value` lines
  std::string serialize() const;
  std::uint64_t hash() const;  // FNV-1a of the canonical form

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;
  std::vector<std::uint64_t> get_seed_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value);

  // throws InvalidInput listing keys that no getter ever looked at
  void assert_fully_consumed() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace splitsmc
