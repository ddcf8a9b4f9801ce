#pragma once

#include <stdexcept>

namespace awconv {

// Shape and usage violations are caller errors; format errors come from
// decoding external bytes (datasets, checkpoints); numeric errors flag
// NaN/Inf conditions detected at runtime. The CLI maps these to distinct
// exit codes.

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace awconv
