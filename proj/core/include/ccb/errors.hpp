#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ccb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration or an incompatible disruption pipeline.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A malformed record in a benchmark or fixture file. Carries the 1-based
/// line number and the offending field so the message can point at it.
class FormatError : public Error {
 public:
  FormatError(std::string source, std::size_t line, std::string field,
              const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": field '" + field +
              "': " + what),
        source_(std::move(source)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string source_;
  std::size_t line_;
  std::string field_;
};

/// The continuation tokenized to zero tokens.
class EmptyContinuationError : public Error {
 public:
  EmptyContinuationError() : Error("empty continuation") {}
};

/// The backend cannot perform the requested operation (e.g. sampling on a
/// remote scorer).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// The remote side could not be reached, or kept failing after retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts, int last_status)
      : Error(what + " (attempts=" + std::to_string(attempts) +
              ", last_status=" + std::to_string(last_status) + ")"),
        attempts_(attempts),
        last_status_(last_status) {}

  int attempts() const noexcept { return attempts_; }
  /// HTTP status of the last attempt, or 0 if no response was received.
  int last_status() const noexcept { return last_status_; }

 private:
  int attempts_;
  int last_status_;
};

/// A peer answered, but the answer violates the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A remote error response ({error: {code, message}}) that is not retried.
class RemoteError : public Error {
 public:
  RemoteError(int status, std::string code, const std::string& message)
      : Error("remote error " + std::to_string(status) + " " + code + ": " +
              message),
        status_(status),
        code_(std::move(code)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

class NoScorableCandidate : public Error {
 public:
  NoScorableCandidate() : Error("no scorable candidate") {}
};

}  // namespace ccb
