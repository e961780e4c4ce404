#pragma once

#include <stdexcept>
#include <string>

namespace capsrec {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape incompatibility; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Bad configuration value or unknown configuration key.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input data (parse failures, empty files, vocabulary mismatches).
struct DataError : Error {
    using Error::Error;
};

// API misuse (calling backward on a non-scalar, missing parameter, ...).
struct ContractError : Error {
    using Error::Error;
};

// Out-of-range node or row index.
struct IndexError : Error {
    using Error::Error;
};

// Graph construction failures (e.g. empty training split).
struct GraphError : Error {
    using Error::Error;
};

// Non-finite value detected at an operation boundary.
struct NumericError : Error {
    using Error::Error;
};

// Training diverged; message carries the epoch/batch where it happened.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace capsrec
