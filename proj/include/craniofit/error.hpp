#pragma once

#include <stdexcept>
#include <string>

namespace craniofit {

// Failure categories; the CLI maps them onto exit codes.
enum class error_kind {
  parse,      // malformed input file or config
  invalid,    // bad argument or violated precondition
  numerical,  // non-finite loss, singular system
  contract,   // generator/discriminator contract violation
  io,         // filesystem
};

class error : public std::runtime_error {
 public:
  error(error_kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  error_kind kind() const noexcept { return kind_; }

 private:
  error_kind kind_;
};

[[noreturn]] inline void throw_invalid(const std::string& message) {
  throw error(error_kind::invalid, message);
}
[[noreturn]] inline void throw_parse(const std::string& message) {
  throw error(error_kind::parse, message);
}
[[noreturn]] inline void throw_numerical(const std::string& message) {
  throw error(error_kind::numerical, message);
}
[[noreturn]] inline void throw_contract(const std::string& message) {
  throw error(error_kind::contract, message);
}
[[noreturn]] inline void throw_io(const std::string& message) {
  throw error(error_kind::io, message);
}

}  // namespace craniofit
