#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dln/errors.hpp"

namespace dln {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Flat `key=value` text: one entry per line, '#' starts a comment line.
/// Insertion order is preserved so written files are byte-stable.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& is, const std::string& origin = "<stream>") {
    KeyValueFile kv;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read '" + path + "'");
    return parse(is, path);
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write '" + path + "'");
    os << str();
  }

  std::string str() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
    return os.str();
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  template <class N>
    requires std::is_arithmetic_v<N>
  void set(const std::string& key, N value) {
    set(key, format_number(value));
  }

  bool has(const std::string& key) const { return find(key).has_value(); }

  std::optional<std::string> find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return std::nullopt;
  }

  std::string get(const std::string& key) const {
    auto v = find(key);
    if (!v) throw FormatError("missing key '" + key + "'");
    return *v;
  }
  std::string get(const std::string& key, const std::string& fallback) const { return find(key).value_or(fallback); }

  long long get_int(const std::string& key) const { return parse_int(key, get(key)); }
  long long get_int(const std::string& key, long long fallback) const {
    auto v = find(key);
    return v ? parse_int(key, *v) : fallback;
  }
  double get_double(const std::string& key) const { return parse_double(key, get(key)); }
  double get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_double(key, *v) : fallback;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  template <class N>
  static std::string format_number(N value) {
    if constexpr (std::is_integral_v<N>) {
      return std::to_string(value);
    } else {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof(buf), static_cast<double>(value));
      return std::string(buf, r.ptr);
    }
  }

 private:
  static long long parse_int(const std::string& key, const std::string& s) {
    long long v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw FormatError("key '" + key + "': expected integer, got '" + s + "'");
    return v;
  }
  static double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw FormatError("key '" + key + "': expected number, got '" + s + "'");
    return v;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace dln
