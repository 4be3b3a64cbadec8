#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace powerlink {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the offending 1-based line number (0 when
// the problem is not tied to a line).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Missing or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but cannot be used (vocab mismatch, nothing to explain).
class DataError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf on the tape, or an integer overflow in walk counting.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace powerlink
