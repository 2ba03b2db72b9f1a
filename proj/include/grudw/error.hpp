#pragma once

#include <stdexcept>
#include <string>

namespace grudw {

// Malformed or inconsistent input data (schema violations, unknown features,
// bad splits). The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Divergence, non-convergence, singular systems. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace grudw
