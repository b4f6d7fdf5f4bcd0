#pragma once

#include <stdexcept>
#include <string>

namespace l2gmom {

// Exit-code mapping used by the CLI: validation 1, numeric 2, io 3.

class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public ValidationError {
public:
  ParseError(const std::string& msg, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class ConflictError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace l2gmom
