#pragma once

#include <stdexcept>
#include <string>

namespace carfield {

// Base for all carfield errors. Subclasses map to process exit codes in the
// CLI: usage/config -> 1, data -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values, shape mismatches, invalid intervals, use-before-init.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Files, manifests, PNG decoding, schema violations.
class DataError : public Error {
 public:
  using Error::Error;
};

// Config file problems: unknown keys, bad types, missing required fields.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or gradients during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace carfield
