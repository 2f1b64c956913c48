#pragma once

#include <stdexcept>
#include <string>

namespace llmprice {

// Broad failure classes. The CLI maps these onto exit statuses.
enum class ErrorKind {
  kInput,        // malformed files, schemas, arguments, configs
  kConvergence,  // iterative solver ran out of budget
  kScale,        // problem exceeds an enumeration bound
  kNumerical,    // singular systems, non-finite values, degeneracy
  kInternal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

// Bad value in an otherwise well-formed record. `row` is 1-based over data
// rows (the header is row 0); -1 when not tied to a file row.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, long row = -1)
      : Error(ErrorKind::kInput, what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row = -1)
      : Error(ErrorKind::kInput, what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

// Equilibrium sits on an active-set boundary; only one-sided derivatives exist.
class BoundaryPointError : public Error {
 public:
  explicit BoundaryPointError(const std::string& what)
      : Error(ErrorKind::kNumerical, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_gap)
      : Error(ErrorKind::kConvergence, what), last_gap_(last_gap) {}
  double last_gap() const noexcept { return last_gap_; }

 private:
  double last_gap_;
};

class ScaleError : public Error {
 public:
  explicit ScaleError(const std::string& what) : Error(ErrorKind::kScale, what) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what) : Error(ErrorKind::kInternal, what) {}
};

}  // namespace llmprice
