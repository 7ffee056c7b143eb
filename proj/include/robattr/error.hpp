#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace robattr {

// Base error for everything this library throws.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

class shape_error : public error {
 public:
  using error::error;
};

class config_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

namespace detail {

template <class... Args>
std::string msg_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

#define ROBATTR_REQUIRE(cond, ...)                                   \
  do {                                                               \
    if (!(cond)) throw ::robattr::error(                             \
        ::robattr::detail::msg_cat(__VA_ARGS__));                    \
  } while (0)

}  // namespace robattr
