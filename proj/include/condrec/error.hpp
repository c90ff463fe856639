#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace condrec {

/// Process exit codes shared by every command.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  invariant = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, std::string kind, const std::string& message)
      : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}

  ExitCode code() const noexcept { return code_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  ExitCode code_;
  std::string kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ExitCode::usage, "usage", message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message, std::string kind = "data")
      : Error(ExitCode::data, std::move(kind), message) {}
};

class VocabularyError : public DataError {
 public:
  explicit VocabularyError(const std::string& message)
      : DataError(message, "vocabulary") {}
};

class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& message)
      : DataError(message, "format") {}
};

class DimensionError : public DataError {
 public:
  explicit DimensionError(const std::string& message)
      : DataError(message, "dimension") {}
};

/// A parse failure with a 1-based line number (TSV) or 0-based character
/// position (SMILES). Unused coordinates are npos.
class ParseError : public DataError {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  ParseError(const std::string& message, std::size_t line, std::size_t position)
      : DataError(message, "parse"), line_(line), position_(position) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t line_;
  std::size_t position_;
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& message, std::string kind = "invariant")
      : Error(ExitCode::invariant, std::move(kind), message) {}
};

/// Raised when a validation or test-split record reaches a code path that
/// may only see training data.
class LeakageError : public InvariantError {
 public:
  explicit LeakageError(const std::string& message)
      : InvariantError(message, "leakage") {}
};

}  // namespace condrec
