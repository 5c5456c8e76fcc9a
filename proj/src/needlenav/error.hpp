#pragma once

#include <stdexcept>
#include <string>

namespace needlenav {

enum class ErrorCode {
  InvalidArgument,
  Degenerate,
  Singular,
  OutOfRange,
  InsufficientData,
  Io,
  Parse,
  PortUnavailable,
  PipelineFailure,
};

/// Exception carried through the C++ core; the C API maps `code()` onto
/// its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace needlenav
