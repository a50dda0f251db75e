#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tabsem {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -- input errors ------------------------------------------------------------

class NoTableFound : public Error {
 public:
  NoTableFound() : Error("no <table> element found") {}
};

class MalformedHtml : public Error {
 public:
  MalformedHtml(const std::string& what, std::size_t offset)
      : Error("malformed html at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class VocabParseError : public Error {
 public:
  // line is 1-based; 0 when the position is a byte offset into a JSON document
  VocabParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error(format(what, line, offset)), line_(line), offset_(offset) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t offset) {
    if (line > 0) return "vocab parse error at line " + std::to_string(line) + ": " + what;
    return "vocab parse error at byte " + std::to_string(offset) + ": " + what;
  }
  std::size_t line_;
  std::size_t offset_;
};

class JsonParseError : public Error {
 public:
  JsonParseError(const std::string& what, std::size_t offset)
      : Error("json parse error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class EmptyTable : public InvalidInput {
 public:
  EmptyTable() : InvalidInput("table has no non-empty cell text") {}
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// -- backend errors ----------------------------------------------------------

class IoError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class AuthError : public BackendError {
 public:
  explicit AuthError(int status)
      : BackendError("authentication rejected (HTTP " + std::to_string(status) + ")"), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class RateLimited : public BackendError {
 public:
  RateLimited() : BackendError("rate limited (HTTP 429) after all retries") {}
};

class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ScriptExhausted : public BackendError {
 public:
  ScriptExhausted() : BackendError("mock script exhausted") {}
};

class EmptyCompletion : public BackendError {
 public:
  EmptyCompletion() : BackendError("model returned an empty completion") {}
};

}  // namespace tabsem
