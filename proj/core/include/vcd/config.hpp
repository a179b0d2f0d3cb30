// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace vcd {

// Flat `key=value` store. Doubles are written in shortest round-trip form.
class KeyValues {
 public:
  // Lines are `key = value`; `#` starts a comment; blank lines are ignored.
  static KeyValues parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, int value);
  void set(const std::string& key, long value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, double value);
  void set(const std::string& key, bool value);
  void set(const std::string& key, const std::vector<int>& value);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // Overrides existing keys only; an unknown key is a ConfigError.
  void override_with(const KeyValues& other);
  // Keys starting with `prefix`, with the prefix removed.
  KeyValues subset(const std::string& prefix) const;
  // Adds every entry of `other` under `prefix`.
  void absorb(const KeyValues& other, const std::string& prefix);

  std::string dump() const;
  void save(const std::filesystem::path& path) const;
  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double v);

}  // namespace vcd
