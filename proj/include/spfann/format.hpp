#pragma once

#include <charconv>
#include <string>

namespace spf {

// Shortest decimal text that reads back to the same double. Locale-free, so
// reports are byte-stable.
inline std::string fmt_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace spf
