#pragma once

#include <stdexcept>
#include <string>

namespace tsdf {

// Error categories map onto CLI exit codes (see tools/tsdfnet.cpp).
enum class ErrorKind { Config, Data, Numeric, Shape, Usage };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, "config error: " + m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::Data, "data error: " + m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, "numeric error: " + m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorKind::Shape, "shape error: " + m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::Usage, "usage error: " + m) {}
};

/// Process exit code for an error kind: 2 config/usage/shape, 3 data, 4 numeric.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric: return 4;
    default: return 2;
  }
}

}  // namespace tsdf
