#pragma once

#include <stdexcept>
#include <string>

namespace dtts {

/// Failure categories; the CLI maps these to its exit codes.
enum class ErrorKind { kUsage, kData, kNumeric, kContract };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

/// A vocoder (or other pluggable stage) broke its declared I/O contract.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

/// Length regulation produced zero frames.
class EmptyExpansionError : public DataError {
 public:
  EmptyExpansionError() : DataError("empty expansion: durations sum to zero") {}
};

}  // namespace dtts
