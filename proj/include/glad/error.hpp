#pragma once

#include <stdexcept>
#include <string>

namespace glad {

// Error categories shared by every module. The CLI maps them onto exit codes.
enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  io_error,
  corrupted_header,
  truncated_frame_data,
  manifest_mismatch,
  numeric_failure,
  config_error,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace glad
