#pragma once

#include <stdexcept>
#include <string>

namespace soh {

// Base for all library errors. `kind()` is the stable machine-parsable tag
// the CLI prints as `error:<kind>: ...`.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class NotFoundError : public Error {
public:
  explicit NotFoundError(const std::string& m) : Error("NotFound", m) {}
};

class SchemaError : public Error {
public:
  explicit SchemaError(const std::string& m) : Error("SchemaError", m) {}
};

class ParseError : public Error {
public:
  ParseError(const std::string& m, long row = -1)
      : Error("ParseError", row >= 0 ? m + " (row " + std::to_string(row) + ")" : m),
        row_(row) {}

  long row() const noexcept { return row_; }

private:
  long row_;
};

class InvalidInputError : public Error {
public:
  explicit InvalidInputError(const std::string& m) : Error("InvalidInput", m) {}
};

class CycleTooShortError : public Error {
public:
  CycleTooShortError(const std::string& m, int cycle_index)
      : Error("CycleTooShort", m + " (cycle " + std::to_string(cycle_index) + ")"),
        cycle_index_(cycle_index) {}

  int cycle_index() const noexcept { return cycle_index_; }

private:
  int cycle_index_;
};

class InsufficientDataError : public Error {
public:
  explicit InsufficientDataError(const std::string& m) : Error("InsufficientData", m) {}
};

class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& m) : Error("NumericalError", m) {}
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};

class DivergenceError : public Error {
public:
  DivergenceError(const std::string& m, int epoch)
      : Error("DivergenceError", m + " (epoch " + std::to_string(epoch) + ")"),
        epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

private:
  int epoch_;
};

class VersionError : public Error {
public:
  explicit VersionError(const std::string& m) : Error("VersionError", m) {}
};

class CorruptModelError : public Error {
public:
  explicit CorruptModelError(const std::string& m) : Error("CorruptModel", m) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};

}  // namespace soh
