#pragma once

#include <stdexcept>
#include <string>

namespace fovsteg {

/// Failure categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  Usage = 1,
  Data = 2,
  ModelMismatch = 3,
  Runtime = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::Usage, m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

struct ModelMismatchError : Error {
  explicit ModelMismatchError(const std::string& m) : Error(ErrorKind::ModelMismatch, m) {}
};

struct RuntimeFailure : Error {
  explicit RuntimeFailure(const std::string& m) : Error(ErrorKind::Runtime, m) {}
};

}  // namespace fovsteg
