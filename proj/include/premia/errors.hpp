#pragma once

#include <stdexcept>
#include <string>

namespace premia {

// Bad inputs: malformed files, schema violations, impossible configurations.
// The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Errors talking to an external service (exit code 3).
class ClientError : public std::runtime_error {
 public:
  explicit ClientError(const std::string& what) : std::runtime_error(what) {}
};

class TransportError : public ClientError {
 public:
  explicit TransportError(const std::string& what) : ClientError(what) {}
};

class AuthError : public ClientError {
 public:
  explicit AuthError(const std::string& what) : ClientError(what) {}
};

class ProtocolError : public ClientError {
 public:
  explicit ProtocolError(const std::string& what) : ClientError(what) {}
};

// Training blew up or an internal invariant broke (exit code 1).
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, int epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace premia
