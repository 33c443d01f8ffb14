#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy shared by the library and the CLI exit-code mapping:
//   ConfigError  -> bad configuration / flag / schema violations
//   DataError    -> malformed inputs, parse failures, corrupt checkpoints
//   NumericError -> NaN/Inf or other runtime numeric failures
// Everything else (std::invalid_argument etc.) signals a broken caller
// contract and is treated as an internal error by the CLI.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
