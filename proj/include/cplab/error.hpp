#pragma once

#include <stdexcept>
#include <string>

namespace cplab {

// One error type for the whole project; the kind tells callers (and tests)
// which contract was violated.
enum class ErrorKind {
  dimension,    // shape / size mismatch between operands
  argument,     // invalid argument value or empty input
  spec,         // impossible corpus / experiment specification
  template_,    // prompt template missing its placeholder
  empty_match,  // mined caption search found nothing
  format,       // malformed file on load
  integrity,    // checksum mismatch on load
  degenerate,   // degenerate data (single class, zero variance)
  diverged,     // training produced non-finite loss
  numeric,      // non-finite values out of a tensor op
  io,           // filesystem failure
  usage,        // CLI misuse
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace cplab
