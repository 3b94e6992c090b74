#pragma once

#include <cstdio>
#include <string>

namespace metaprompt {

/// Shortest-ish decimal form used in every CSV the engine writes.
inline std::string format_double(double value, int precision = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
  return buf;
}

}  // namespace metaprompt
