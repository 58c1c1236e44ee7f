#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fk {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition or schema.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg, std::string path = {});

  /// JSON-pointer-like location of the offending value, empty when not applicable.
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed text input. `offset` is the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t offset);

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Input could not be read or decoded (bad file, bad magic bytes).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fk
