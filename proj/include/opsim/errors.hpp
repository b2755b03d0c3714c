#pragma once

#include <stdexcept>
#include <string>

namespace opsim {

/// Bad input data, bad configuration, broken invariants. CLI exit code 1.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& message) : std::runtime_error(message) {}
};

/// Filesystem problems: missing files, unwritable directories.
class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& message) : std::runtime_error(message) {}
};

/// Backend/network failures (exhausted retries, timeouts, replay misses). CLI exit code 2.
class BackendError : public std::runtime_error {
  public:
    BackendError(const std::string& message, std::string correlation_id)
        : std::runtime_error(message + " [request " + correlation_id + "]"),
          correlation_id_(std::move(correlation_id)) {}

    const std::string& correlation_id() const { return correlation_id_; }

  private:
    std::string correlation_id_;
};

} // namespace opsim
