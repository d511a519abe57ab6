#pragma once

#include <stdexcept>
#include <string>

namespace chexrel {

enum class ErrorKind {
  dimension,           // shape mismatch between operands
  config,              // invalid configuration value
  contract,            // precondition / invariant violation
  numeric,             // NaN or Inf where finite values are required
  degenerate,          // empty batch, empty index, empty split
  incomplete_backward, // optimizer step with missing gradients
  parse,               // malformed file
  unsupported_version, // file format version mismatch
  undefined_statistic, // t-test with zero variance and equal means
  io,                  // file open / read / write failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  const char* kind_name() const {
    switch (kind_) {
      case ErrorKind::dimension: return "dimension";
      case ErrorKind::config: return "config";
      case ErrorKind::contract: return "contract";
      case ErrorKind::numeric: return "numeric";
      case ErrorKind::degenerate: return "degenerate";
      case ErrorKind::incomplete_backward: return "incomplete_backward";
      case ErrorKind::parse: return "parse";
      case ErrorKind::unsupported_version: return "unsupported_version";
      case ErrorKind::undefined_statistic: return "undefined_statistic";
      case ErrorKind::io: return "io";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace chexrel
