#pragma once

#include <stdexcept>
#include <string>

namespace uld {

// Shape/dimension violations (bad conv channel counts, mismatched map sizes, ...).
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed or inconsistent input data (files, tables, configs).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or other numeric failures during computation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace uld
