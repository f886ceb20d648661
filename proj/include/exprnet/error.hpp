#pragma once

#include <stdexcept>
#include <string>

namespace exprnet {

/// Base of every exception thrown by the library. `kind()` is a stable,
/// machine-parseable class name that the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
};

#define EXPRNET_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(what) {}          \
    const char* kind() const noexcept override { return #Name; }     \
  };

EXPRNET_DEFINE_ERROR(ShapeError)
EXPRNET_DEFINE_ERROR(NumericError)
EXPRNET_DEFINE_ERROR(ValueError)
EXPRNET_DEFINE_ERROR(ConfigError)
EXPRNET_DEFINE_ERROR(DataError)
EXPRNET_DEFINE_ERROR(FormatError)
EXPRNET_DEFINE_ERROR(IoError)
EXPRNET_DEFINE_ERROR(CheckpointError)

#undef EXPRNET_DEFINE_ERROR

}  // namespace exprnet
