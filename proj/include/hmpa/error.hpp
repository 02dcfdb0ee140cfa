#pragma once

#include <stdexcept>
#include <string>

namespace hmpa {

// Raised for problems caused by user-supplied input: malformed files,
// bad config values, records violating format invariants. The CLI maps
// these to exit code 1; everything else is an internal failure (exit 2).
struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contract violations inside the library (shape mismatches, non-finite
// values, misuse of a single-use graph).
struct invariant_error : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace hmpa
