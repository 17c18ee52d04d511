#pragma once

#include <stdexcept>
#include <string>

namespace sasforge {

// Error taxonomy used across the library. The CLI maps these onto process
// exit codes (usage 2, data 3, numerical 4).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument or violated precondition/invariant.
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error(msg) {}
};

// Incompatible tensor/array shapes; message names the operation and shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad or missing input data (files, datasets, manifests).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Malformed configuration or missing required setting.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite values encountered where finiteness is required (NaN abort).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace sasforge
