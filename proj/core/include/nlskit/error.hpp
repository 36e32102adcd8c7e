#pragma once

#include <stdexcept>
#include <string>

namespace nlskit {

/// Base of every error raised by the toolkit.
///
/// Errors split in two families: `DataError` for anything caused by input
/// data (files, corpora, numeric degeneracy) and `ArgumentError` for calls
/// that violate an operation's preconditions. The CLI maps the former to
/// exit status 2 and the latter to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed text row. `what()` reads `file:line:column: message`.
class ParseError : public DataError {
 public:
  ParseError(std::string file, std::size_t line, std::size_t column, const std::string& message)
      : DataError(file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        file_(std::move(file)),
        line_(line),
        column_(column) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::string file_;
  std::size_t line_;
  std::size_t column_;
};

/// An utterance names a session that the metadata does not define.
class ReferenceError : public DataError {
 public:
  using DataError::DataError;
};

class DuplicateError : public DataError {
 public:
  using DataError::DataError;
};

class LookupError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// Bad magic or unsupported header fields in a binary file.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Binary payload shorter or longer than its header announces.
class LengthError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values where finite ones are required.
class ValueError : public DataError {
 public:
  using DataError::DataError;
};

/// A class is missing from a training split, so class weights are undefined.
class WeightError : public DataError {
 public:
  using DataError::DataError;
};

class TrainingError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace nlskit
