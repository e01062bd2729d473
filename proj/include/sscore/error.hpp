#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace sscore {

/// Raised for every contract violation in the library (bad shapes, invalid
/// parameters, malformed files).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Parts>
std::string concat(Parts&&... parts) {
  std::ostringstream oss;
  (oss << ... << std::forward<Parts>(parts));
  return oss.str();
}

}  // namespace detail

template <typename... Parts>
inline void require(bool condition, Parts&&... message) {
  if (!condition) throw Error(detail::concat(std::forward<Parts>(message)...));
}

}  // namespace sscore
