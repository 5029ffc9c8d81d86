#pragma once

#include <stdexcept>
#include <string>

namespace aax {

// Base for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad spec fields, unknown families, missing layers.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller handed in data that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

// Training diverged or could not proceed.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Dataset could not be ingested.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Internal protocol invariant broken (a bug in the caller's sequencing).
class InvariantError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

// Operation called with an argument of the wrong kind (e.g. enqueueing a
// non-flagged decision).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace aax
