#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace divac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonHermitianError : public Error {
 public:
  NonHermitianError(std::size_t row, std::size_t col, double mismatch)
      : Error("matrix is not Hermitian: entries (" + std::to_string(row) + "," +
              std::to_string(col) + ") and (" + std::to_string(col) + "," +
              std::to_string(row) + ") differ by " + std::to_string(mismatch)),
        row_(row),
        col_(col) {}
  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A fit direction is flat: the data cannot constrain the listed combination.
class NonIdentifiableError : public Error {
 public:
  explicit NonIdentifiableError(const std::string& what,
                                std::vector<double> null_direction = {})
      : Error(what), null_direction_(std::move(null_direction)) {}
  const std::vector<double>& null_direction() const { return null_direction_; }

 private:
  std::vector<double> null_direction_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual_norm,
                   const std::string& quantity = "final residual norm")
      : Error(what + " (" + quantity + " " + std::to_string(residual_norm) + ")"),
        residual_norm_(residual_norm) {}
  double residual_norm() const { return residual_norm_; }

 private:
  double residual_norm_;
};

/// Adiabatic label tracking failed between two grid points.
class TrackingError : public Error {
 public:
  TrackingError(double from, double to, double overlap)
      : Error("strain grid too coarse for label tracking between " + std::to_string(from) +
              " and " + std::to_string(to) + " GHz (overlap " + std::to_string(overlap) + ")"),
        from_(from),
        to_(to),
        overlap_(overlap) {}
  double from() const { return from_; }
  double to() const { return to_; }
  double overlap() const { return overlap_; }

 private:
  double from_;
  double to_;
  double overlap_;
};

class LoadError : public Error {
 public:
  LoadError(const std::string& source, std::size_t row, const std::string& column,
            const std::string& what)
      : Error(source + ": row " + std::to_string(row) + ", column '" + column + "': " + what),
        row_(row),
        column_(column) {}
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace divac
