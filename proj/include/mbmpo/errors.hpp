#ifndef MBMPO_ERRORS_HPP_
#define MBMPO_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mbmpo {

// Base class for every error raised by the library. kind() is a stable
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// invalid configuration or mismatched dimensions
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

// an operation was called outside its documented domain
class PreconditionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "precondition"; }
};

// non-finite values produced or consumed
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

// a primitive the differentiation engine does not implement
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "unsupported"; }
};

// Rethrows `e` as the same error kind with `context` prefixed to the message.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string message = context + ": " + e.what();
  if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(message);
  if (dynamic_cast<const PreconditionError*>(&e)) throw PreconditionError(message);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(message);
  if (dynamic_cast<const UnsupportedOperation*>(&e)) throw UnsupportedOperation(message);
  throw Error(message);
}

}  // namespace mbmpo

#endif  // MBMPO_ERRORS_HPP_
