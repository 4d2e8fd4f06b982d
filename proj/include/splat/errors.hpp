#pragma once

#include <stdexcept>
#include <string>

namespace splat {

/// Bad argument values (counts, ranges, degenerate geometry).
struct invalid_parameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Tensor / buffer dimension mismatches.
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Broken internal contract (mismatched forward record, frozen tensor
/// received an update, checksum drift).
struct contract_violation : std::logic_error {
    using std::logic_error::logic_error;
};

/// Missing or malformed files, manifests, checkpoints.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace splat
