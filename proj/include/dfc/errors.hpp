#pragma once

#include <stdexcept>
#include <string>

namespace dfc {

// Base class for all workbench errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration or malformed request (CLI exit code 2).
struct UsageError : Error {
    using Error::Error;
};

// Numerical failure: singular algebraic loop, divergence, ARE failure (CLI exit code 3).
struct NumericalError : Error {
    using Error::Error;
};

// Regression data does not persistently excite the unknowns (CLI exit code 4).
struct ExcitationError : Error {
    using Error::Error;
};

} // namespace dfc
