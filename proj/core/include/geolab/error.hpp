#pragma once

#include <stdexcept>
#include <string>

namespace geolab {

// Runtime failure inside the library (bad state, numerical divergence, I/O).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller handed us an invalid configuration or argument. The CLI maps this
// to exit code 1, everything else to 2.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

}  // namespace geolab
