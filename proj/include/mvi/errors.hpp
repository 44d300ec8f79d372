#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvi {

/// Base class for all toolchain errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent configuration / preconditions on user input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Geometry produced a folded or self-intersecting profile.
class InvalidProfileError : public Error {
 public:
  using Error::Error;
};

/// A grid cell has non-positive signed area. Carries the first offending cell.
class NegativeVolumeError : public Error {
 public:
  NegativeVolumeError(std::size_t i, std::size_t j, double volume)
      : Error("negative cell volume " + std::to_string(volume) + " at cell (" +
              std::to_string(i) + ", " + std::to_string(j) + ")"),
        i(i),
        j(j),
        volume(volume) {}
  std::size_t i, j;
  double volume;
};

/// Flow state left the physical region (rho <= 0 or p <= 0).
class NonPhysicalStateError : public Error {
 public:
  NonPhysicalStateError(std::size_t cell, const std::string& what)
      : Error(what + " at cell " + std::to_string(cell)), cell(cell) {}
  std::size_t cell;
};

/// Adjoint solve requested on a primal solution that did not converge.
class PrimalNotConvergedError : public Error {
 public:
  using Error::Error;
};

/// Adjoint fixed-point iteration missed its target or diverged.
class AdjointNotConvergedError : public Error {
 public:
  using Error::Error;
};

/// Quotient objective with a vanishing or negative denominator.
class DegenerateDenominatorError : public Error {
 public:
  using Error::Error;
};

/// |dF_nonlinear| below the objective-scale epsilon; sample must be excluded.
class DegenerateBaselineDeltaError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

class SeedDimensionMismatchError : public Error {
 public:
  using Error::Error;
};

class UnsupportedPrimitiveError : public Error {
 public:
  using Error::Error;
};

/// Covariance factorization failed even after nugget regularization.
class CovarianceNotPDError : public Error {
 public:
  using Error::Error;
};

/// File format error. line is 1-based for text, byte offset for binary.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what),
        path(path),
        line(line) {}
  std::string path;
  std::size_t line;
};

}  // namespace mvi
