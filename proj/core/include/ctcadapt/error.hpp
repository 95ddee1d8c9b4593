// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ctcadapt {

// Base of all library errors. The CLI maps these onto exit codes:
// ValidationError -> 1, everything else -> 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/model dimension disagreements.
struct ShapeError : Error {
  using Error::Error;
};

// Bad argument values: empty inputs, out-of-range ids, infeasible instances.
struct ValueError : Error {
  using Error::Error;
};

// User-facing configuration or argument problems.
struct ValidationError : Error {
  using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace ctcadapt
