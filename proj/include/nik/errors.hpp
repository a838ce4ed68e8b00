#pragma once

#include <stdexcept>
#include <string>

namespace nik {

// Caller broke an API contract (shape mismatch, bad argument, non-scalar root).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// 6D rotation input too close to degenerate for Gram-Schmidt.
struct DegenerateRotation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value surfaced in a numeric computation.
struct NumericalFault : std::runtime_error {
    explicit NumericalFault(const std::string& msg, int layer = -1)
        : std::runtime_error(msg), layer_index(layer) {}
    int layer_index;
};

struct UpsampleUnsupported : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChunkTooLong : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable, malformed or empty input data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nik
