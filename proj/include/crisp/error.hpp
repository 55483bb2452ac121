// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace crisp {

// Base for every error raised by the library. The CLI maps these to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed HybridSparseMatrix (bad indices, offsets or lengths).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Binary file problems: magic, version, truncation, trailing bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss turns non-finite during training or saliency passes.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace crisp
