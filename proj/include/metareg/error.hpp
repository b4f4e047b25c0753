#pragma once

#include <stdexcept>
#include <string>

namespace metareg {

// Base error for all failures raised by the library. Messages are
// self-contained (they name the offending column, row, shape, ...).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& message) : std::runtime_error(message) {}
};

// Raised for malformed run configurations (unknown keys, missing files).
// Distinguished from Error so the CLI can map it to a usage exit code.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(message) {}
};

}  // namespace metareg
