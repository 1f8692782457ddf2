#pragma once

#include <stdexcept>
#include <string>

namespace uld {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument value or shape (non-positive temperature, n < length, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed data (non-finite logits, unnormalized masses).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Distributions defined over different supports where one is required.
class SupportError : public Error {
 public:
  using Error::Error;
};

/// Teacher puts mass where the student has none; KL is undefined.
class AbsoluteContinuityError : public Error {
 public:
  using Error::Error;
};

/// Empty step lists, empty answers, empty reference vocabularies.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Problem size beyond what an exhaustive or exact routine accepts.
class ScaleError : public Error {
 public:
  using Error::Error;
};

/// Unreadable checkpoint, vocabulary or merge file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Unknown keys or unparsable values in a config file or on the command line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint and a tokenizer that do not belong together.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace uld
