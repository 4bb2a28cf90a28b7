#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace finch {

/// Input outside an operation's domain (negative loss, bad config value, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed serialized text or config file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A training run produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long last_good_step)
      : std::runtime_error(what), last_good_step_(last_good_step) {}

  /// Index of the last StepRecord that was fully finite, or -1.
  long last_good_step() const noexcept { return last_good_step_; }

 private:
  long last_good_step_;
};

}  // namespace finch
