#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcfl {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  using Error::Error;
};

// Norm below the degeneracy threshold (zero or collapsed embedding).
class DegenerateInputError : public Error {
  using Error::Error;
};

class EmptyReductionError : public Error {
  using Error::Error;
};

class IndexError : public Error {
  using Error::Error;
};

// Two parameter vectors with different manifests were combined.
class ShapeError : public Error {
  using Error::Error;
};

class NoPositivesError : public Error {
  using Error::Error;
};

class NoUsableAnchorsError : public Error {
  using Error::Error;
};

class InsufficientClassesError : public Error {
  using Error::Error;
};

class PartitionError : public Error {
  using Error::Error;
};

class FormatError : public Error {
  using Error::Error;
};

class ConfigError : public Error {
  using Error::Error;
};

class IncompatibleCheckpointError : public Error {
  using Error::Error;
};

class GenerationError : public Error {
  using Error::Error;
};

// A local objective became non-finite or exceeded the divergence ceiling.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t round, std::size_t client, double loss);

  std::size_t round() const { return round_; }
  std::size_t client() const { return client_; }
  double loss() const { return loss_; }

 private:
  std::size_t round_;
  std::size_t client_;
  double loss_;
};

}  // namespace dcfl
