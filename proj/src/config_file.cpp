#include "steflow/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "steflow/errors.hpp"

namespace steflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  V out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ArgumentError("invalid value '" + value + "' for " + key);
  return out;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ArgumentError("line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

void write_key_values(const KeyValues& kv, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) throw IoError("short write to " + path.string());
}

int kv_int(const std::string& key, const std::string& value) {
  return parse_number<int>(key, value);
}

long long kv_int64(const std::string& key, const std::string& value) {
  return parse_number<long long>(key, value);
}

double kv_double(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value);
}

bool kv_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ArgumentError("invalid boolean '" + value + "' for " + key);
}

std::vector<int> kv_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& p : split_list(value)) out.push_back(kv_int(key, p));
  return out;
}

std::vector<double> kv_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& p : split_list(value)) out.push_back(kv_double(key, p));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename V>
std::string join(const std::vector<V>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<V>)
      out += format_double(values[i]);
    else
      out += std::to_string(values[i]);
  }
  return out;
}

template std::string join(const std::vector<int>&);
template std::string join(const std::vector<double>&);

}  // namespace steflow
