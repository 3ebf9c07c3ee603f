#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "zootune/errors.hpp"
#include "zootune/fs_util.hpp"

namespace zootune {

// Sectioned key=value run configuration:
//   [train]
//   lr = 0.01
// '#' and ';' start comments; keys before any section header live in "".
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const {
    auto it = sections.find(section);
    return it != sections.end() && it->second.count(key) != 0;
  }
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const {
    auto it = sections.find(section);
    if (it == sections.end()) return fallback;
    auto kt = it->second.find(key);
    return kt == it->second.end() ? fallback : kt->second;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ConfigFile parse_config_text(const std::string& text) {
  ConfigFile cfg;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("malformed section header at line " + std::to_string(line_no) + ": " +
                          line);
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("empty section name at line " + std::to_string(line_no));
      }
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("expected key=value at line " + std::to_string(line_no) + ": " + line);
    }
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key at line " + std::to_string(line_no));
    cfg.sections[section][key] = value;
  }
  return cfg;
}

inline ConfigFile load_config_file(const std::string& path) {
  return parse_config_text(read_file(path));
}

inline double config_double(const ConfigFile& cfg, const std::string& section,
                            const std::string& key, double fallback) {
  if (!cfg.has(section, key)) return fallback;
  const std::string& s = cfg.get(section, key);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw ValueError("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for [" + section + "] " + key + ": " + s);
  }
}

inline long long config_int(const ConfigFile& cfg, const std::string& section,
                            const std::string& key, long long fallback) {
  if (!cfg.has(section, key)) return fallback;
  const std::string& s = cfg.get(section, key);
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw ValueError("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for [" + section + "] " + key + ": " + s);
  }
}

inline std::uint64_t config_u64(const ConfigFile& cfg, const std::string& section,
                                const std::string& key, std::uint64_t fallback) {
  if (!cfg.has(section, key)) return fallback;
  const std::string& s = cfg.get(section, key);
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw ValueError("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned value for [" + section + "] " + key + ": " + s);
  }
}

}  // namespace zootune
