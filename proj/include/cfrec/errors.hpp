#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfrec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, invalid configuration, violated preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Numerical failure: divergence, singular systems.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfrec
