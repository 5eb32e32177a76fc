#pragma once

#include <algorithm>
#include <charconv>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace tcs {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One `[name]` block of a line-oriented key=value file. Keys before the first
/// header land in a section with an empty name. `#` starts a comment.
struct KvSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<int> lines;
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<KvSection> parse_kv(const std::string& text, const std::string& origin = "<config>") {
  std::vector<KvSection> out(1);
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
      out.push_back({trim(line.substr(1, line.size() - 2)), lineno, {}, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.back().entries.emplace_back(key, trim(line.substr(eq + 1)));
    out.back().lines.push_back(lineno);
  }
  return out;
}

/// Typed reader over one section that tracks which keys were consumed, so
/// leftovers can be reported as typos.
class KvReader {
 public:
  KvReader(const KvSection& s, std::string origin) : s_(s), origin_(std::move(origin)) {}

  bool has(const std::string& key) const {
    return std::any_of(s_.entries.begin(), s_.entries.end(), [&](const auto& e) { return e.first == key; });
  }

  template <class V>
  void get(const std::string& key, V& value) {
    for (std::size_t i = 0; i < s_.entries.size(); ++i) {
      if (s_.entries[i].first != key) continue;
      used_.insert(i);
      value = convert<V>(s_.entries[i].second, key, s_.lines[i]);
    }
  }

  void finish() const {
    for (std::size_t i = 0; i < s_.entries.size(); ++i) {
      if (used_.count(i)) continue;
      const std::string where = s_.name.empty() ? "" : " in [" + s_.name + "]";
      throw ConfigError(origin_ + ":" + std::to_string(s_.lines[i]) + ": unknown key '" + s_.entries[i].first + "'" +
                        where);
    }
  }

  template <class V>
  V convert(const std::string& text, const std::string& key, int line) const {
    auto fail = [&]() {
      return ConfigError(origin_ + ":" + std::to_string(line) + ": bad value '" + text + "' for '" + key + "'");
    };
    if constexpr (std::is_same_v<V, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      throw fail();
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw fail();
        return static_cast<V>(v);
      } catch (const std::logic_error&) {
        throw fail();
      }
    } else {
      V v{};
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size()) throw fail();
      return v;
    }
  }

 private:
  const KvSection& s_;
  std::string origin_;
  std::set<std::size_t> used_;
};

/// Comma-separated integer list, e.g. "16,8,4".
inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = trim(text.substr(pos, comma - pos));
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError("bad integer list '" + text + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace tcs
