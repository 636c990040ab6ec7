#pragma once

#include <charconv>
#include <string>

namespace pflab {

// Shortest representation that round-trips; used for every CSV value.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace pflab
