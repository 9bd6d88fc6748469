#pragma once

#include <stdexcept>
#include <string>

namespace ceidm {

// Error taxonomy mirrored by the CLI exit codes:
//   ValidationError -> 2, IoError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, malformed inputs, violated schema or type invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Unparsable structured content (e.g. an LLM answer with no usable triplet
// array). Carries the raw text in the message.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem and transport failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Numeric-domain failures: indefinite matrices, degenerate directions,
// non-finite values produced while probing.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ceidm
