#pragma once

#include <cstdio>
#include <string>

namespace zootune {

// Shortest round-trippable-ish decimal form with `sig` significant digits.
inline std::string format_g(double v, int sig = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", sig, v);
  return buf;
}

}  // namespace zootune
