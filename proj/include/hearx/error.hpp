#pragma once

#include <stdexcept>
#include <string>

namespace hearx {

enum class Errc {
  invalid_config,
  invalid_input,
  invalid_shape,
  contract_violation,
  indeterminate,
  format_error,
  io_error,
  invalid_audiogram,
  undefined_reference,
  configuration,
};

constexpr const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::invalid_input: return "invalid-input";
    case Errc::invalid_shape: return "invalid-shape";
    case Errc::contract_violation: return "contract-violation";
    case Errc::indeterminate: return "indeterminate";
    case Errc::format_error: return "format-error";
    case Errc::io_error: return "io-error";
    case Errc::invalid_audiogram: return "invalid-audiogram";
    case Errc::undefined_reference: return "undefined-reference";
    case Errc::configuration: return "configuration-error";
  }
  return "unknown";
}

/// Exception carrying a machine-readable error category.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace hearx
