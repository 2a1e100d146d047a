#pragma once

#include <stdexcept>
#include <string>

namespace skillrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. The message carries the file and line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Structurally valid input that breaks a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Arguments that violate an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace skillrec
