#pragma once

#include <stdexcept>
#include <string>

namespace otkd {

enum class ErrorCode {
  invalid_input,
  empty_distribution,
  unsupported_size,
  parse_error,
  kind_mismatch,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& what) {
  throw Error(ErrorCode::invalid_input, what);
}

[[noreturn]] inline void throw_empty(const std::string& what) {
  throw Error(ErrorCode::empty_distribution, what);
}

}  // namespace otkd
