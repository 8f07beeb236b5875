#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace darkrank {

// Malformed arguments: shape mismatches, invalid permutations, bad labels.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A request exceeds a documented size limit (e.g. soft-transfer enumeration).
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Non-finite values or degenerate geometry encountered during evaluation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset or checkpoint file; carries 1-based line and column.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// Training hit a non-finite loss; names the component and the step.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& component, std::size_t step)
      : std::runtime_error("non-finite loss component '" + component +
                           "' at step " + std::to_string(step)),
        component_(component),
        step_(step) {}

  const std::string& component() const noexcept { return component_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::string component_;
  std::size_t step_;
};

}  // namespace darkrank
