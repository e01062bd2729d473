#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <system_error>

#include "sscore/error.hpp"

namespace sscore {

/// Shortest decimal text that parses back to the same double. Infinities
/// are written as "inf" / "-inf".
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc{}, "cannot format ", v);
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  if (s == "inf" || s == "+inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  if (s == "nan") return NAN;
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  auto [end, ec] = std::from_chars(first, s.data() + s.size(), v);
  require(ec == std::errc{} && end == s.data() + s.size(), "not a number: \"", s, "\"");
  return v;
}

}  // namespace sscore
