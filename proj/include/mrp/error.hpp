#ifndef MRP_ERROR_HPP
#define MRP_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace mrp {

enum class ErrorCode {
  shape_mismatch,
  unbound_input,
  non_scalar_output,
  non_finite,
  domain,
  invalid_argument,
  parse_error,
  io_error,
  config_error,
};

std::string_view error_code_name(ErrorCode code);

/// Every failure the library reports carries a machine-readable code; the
/// message names the offending node, file line, or parameter.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mrp

#endif  // MRP_ERROR_HPP
