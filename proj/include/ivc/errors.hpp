#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ivc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Blocks of a design disagree on shape, or a parameter is out of range.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(const std::string& what, std::ptrdiff_t detected_rank, std::ptrdiff_t expected_rank)
      : Error(what + " (rank " + std::to_string(detected_rank) + " < " + std::to_string(expected_rank) + ")"),
        rank_(detected_rank),
        expected_(expected_rank) {}

  std::ptrdiff_t rank() const noexcept { return rank_; }
  std::ptrdiff_t expected_rank() const noexcept { return expected_; }

 private:
  std::ptrdiff_t rank_;
  std::ptrdiff_t expected_;
};

/// A row-wise divisor (1 - D_i + omega, or 1 - lambda D_i) is not positive.
class SingularWeightError : public Error {
 public:
  SingularWeightError(std::ptrdiff_t row, double denominator)
      : Error("non-positive row weight " + std::to_string(denominator) + " at row " + std::to_string(row)),
        row_(row),
        denominator_(denominator) {}

  std::ptrdiff_t row() const noexcept { return row_; }
  double denominator() const noexcept { return denominator_; }

 private:
  std::ptrdiff_t row_;
  double denominator_;
};

/// The second-stage system X'C'X is numerically singular.
class NearSingularError : public Error {
 public:
  explicit NearSingularError(double cond)
      : Error("second-stage system is near-singular (cond " + std::to_string(cond) + ")"), cond_(cond) {}

  double cond() const noexcept { return cond_; }

 private:
  double cond_;
};

class OracleInfeasibleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// An operation was called on an object that lacks the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace ivc
