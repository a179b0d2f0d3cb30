// SPDX-License-Identifier: Apache-2.0
#include "vcd/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "vcd/error.hpp"

namespace vcd {

namespace {
std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("value of " + key + " is not a valid number: '" + text + "'");
  return v;
}
}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("cannot format double");
  return std::string(buf, p);
}

KeyValues KeyValues::parse(std::string_view text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    kv.entries_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValues::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
void KeyValues::set(const std::string& key, int value) { entries_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, long value) { entries_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, std::uint64_t value) { entries_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValues::set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }
void KeyValues::set(const std::string& key, const std::vector<int>& value) {
  std::string s;
  for (std::size_t i = 0; i < value.size(); ++i) s += (i ? "," : "") + std::to_string(value[i]);
  entries_[key] = s;
}

const std::string& KeyValues::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key " + key);
  return it->second;
}

int KeyValues::get_int(const std::string& key) const { return parse_number<int>(key, get_string(key)); }
std::uint64_t KeyValues::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get_string(key));
}
double KeyValues::get_double(const std::string& key) const { return parse_number<double>(key, get_string(key)); }

bool KeyValues::get_bool(const std::string& key) const {
  const std::string& v = get_string(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("value of " + key + " is not a boolean: '" + v + "'");
}

std::vector<int> KeyValues::get_ints(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get_string(key));
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(parse_number<int>(key, trim(cell)));
  return out;
}

void KeyValues::override_with(const KeyValues& other) {
  for (const auto& [k, v] : other.entries_) {
    if (!has(k)) throw ConfigError("unknown config key " + k);
    entries_[k] = v;
  }
}

KeyValues KeyValues::subset(const std::string& prefix) const {
  KeyValues out;
  for (const auto& [k, v] : entries_)
    if (k.compare(0, prefix.size(), prefix) == 0) out.entries_[k.substr(prefix.size())] = v;
  return out;
}

void KeyValues::absorb(const KeyValues& other, const std::string& prefix) {
  for (const auto& [k, v] : other.entries_) entries_[prefix + k] = v;
}

std::string KeyValues::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << dump();
}

}  // namespace vcd
