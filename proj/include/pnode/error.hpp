#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pnode {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-positive pivot during Cholesky (or a zero pivot in LU).
class SingularMatrixError : public Error {
 public:
  SingularMatrixError(std::size_t pivot, const std::string& what)
      : Error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(double residual_norm, std::size_t iterations, const std::string& what)
      : Error(what + " (residual " + std::to_string(residual_norm) + " after " +
              std::to_string(iterations) + " iterations)"),
        residual_norm_(residual_norm),
        iterations_(iterations) {}
  double residual_norm() const noexcept { return residual_norm_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double residual_norm_;
  std::size_t iterations_;
};

// Fixed-Jacobian Newton whose residual grew for several consecutive iterations.
class DivergenceError : public NonConvergenceError {
 public:
  using NonConvergenceError::NonConvergenceError;
};

// A state or stage became non-finite (or left the configured bound) during integration.
class BlowUpError : public Error {
 public:
  BlowUpError(std::size_t step, const std::string& what)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class DataQualityError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pnode
