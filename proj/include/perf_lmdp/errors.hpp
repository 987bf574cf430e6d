#pragma once

#include <stdexcept>
#include <string>

namespace plmdp {

// Bad user input: malformed files, missing fields, out-of-range values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure: invalid kernels, singular systems, solver breakdown.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Output could not be written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace plmdp
