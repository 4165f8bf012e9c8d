#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cqkd {

// Precondition violations use std::invalid_argument directly. The types below
// cover the file formats, where callers need to tell the failure modes apart.

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong magic bytes, unsupported version or inconsistent header fields.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncationError : public FormatError {
 public:
  TruncationError(std::size_t expected, std::size_t actual)
      : FormatError("truncated file: expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Invalid experiment configuration; names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace cqkd
