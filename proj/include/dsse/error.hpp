#pragma once

#include <stdexcept>
#include <string>

namespace dsse {

// Shape / dimension disagreements between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values produced where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad argument values (ranges, fractions, unknown enum strings).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// File parsing / serialization problems.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative solver failed to reach tolerance.
struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), final_residual(residual) {}
    double final_residual;
};

}  // namespace dsse
