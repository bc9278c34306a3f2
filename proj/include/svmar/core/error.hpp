#pragma once

#include <stdexcept>
#include <string>

namespace svmar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when an iterate becomes non-finite. Carries the stage index.
class DivergenceError : public Error {
 public:
  DivergenceError(int stage, const std::string& what)
      : Error("diverged at stage " + std::to_string(stage) + ": " + what), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

/// Raised when training produces a non-finite loss. Carries the step index.
class TrainingError : public Error {
 public:
  TrainingError(long step, const std::string& what)
      : Error("training aborted at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeMismatch(msg);
}

}  // namespace svmar
