#pragma once

#include <stdexcept>
#include <string>

namespace kgvem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (triple files, config files, CSV).
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A non-finite value showed up in a loss, score, or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace kgvem
