#pragma once

// Flat "key = value" text files. Blank lines and lines starting with '#' are
// ignored.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace steflow {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const KeyValues& kv, const std::filesystem::path& path);

/// Typed lookups; a malformed value throws ArgumentError naming the key.
int kv_int(const std::string& key, const std::string& value);
long long kv_int64(const std::string& key, const std::string& value);
double kv_double(const std::string& key, const std::string& value);
bool kv_bool(const std::string& key, const std::string& value);
std::vector<int> kv_int_list(const std::string& key, const std::string& value);
std::vector<double> kv_double_list(const std::string& key, const std::string& value);

std::string format_double(double v);
template <typename V>
std::string join(const std::vector<V>& values);

}  // namespace steflow
