#pragma once

#include <stdexcept>
#include <string>

namespace loopstack {

/// Operand shapes disagree (matmul, norms, weight tensors, cache slots).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value violates a documented invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf or runaway magnitude surfaced by a kernel or an iteration.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed weight file: bad magic, version, truncation, checksum.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An internal protocol invariant (e.g. cache snapshot/crop) was broken.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace loopstack
