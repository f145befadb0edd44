#pragma once

#include <stdexcept>
#include <string>

namespace gv {

// Base of every error raised by the library. The concrete type tells the
// caller which contract was broken; the CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index (token id, group, target, row) outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar backward, nested meters, and similar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied data (empty corpus, malformed files, negative sigma).
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gv
