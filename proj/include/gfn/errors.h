#pragma once

#include <stdexcept>
#include <string>

namespace gfn {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (bad index, empty input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerically meaningless input, e.g. a zero-norm embedding.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

class LoadError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

class SpecError : public DataError {
 public:
  using DataError::DataError;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class SplitInfeasibleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training diverged; carries the step at which the loss became non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace gfn
