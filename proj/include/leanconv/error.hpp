#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace leanconv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two tensors or operators disagree in one named dimension.
class ShapeError : public Error {
 public:
  ShapeError(std::string where, std::string dimension, std::size_t expected,
             std::size_t actual)
      : Error(where + ": " + dimension + " mismatch (expected " +
              std::to_string(expected) + ", got " + std::to_string(actual) +
              ")"),
        dimension_(std::move(dimension)),
        expected_(expected),
        actual_(actual) {}

  const std::string& dimension() const noexcept { return dimension_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string dimension_;
  std::size_t expected_;
  std::size_t actual_;
};

namespace detail {

inline void check_dim(const char* where, const char* dimension,
                      std::size_t expected, std::size_t actual) {
  if (expected != actual) throw ShapeError(where, dimension, expected, actual);
}

}  // namespace detail
}  // namespace leanconv
