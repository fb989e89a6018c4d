#pragma once

#include <stdexcept>
#include <string>

namespace sgan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when a loss term becomes NaN or infinite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::string what, std::string record)
      : Error(std::move(what)), record_(std::move(record)) {}
  /// Structured diagnostic record (one JSON object) describing the failure.
  const std::string& record() const noexcept { return record_; }

 private:
  std::string record_;
};

}  // namespace sgan
