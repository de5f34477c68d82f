#pragma once

#include <stdexcept>
#include <string>

namespace sgl {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

/// A precondition on user-supplied values failed.
struct ValidationError : Error {
    using Error::Error;
};

/// A dataset-level problem (missing class bucket, bad record).
struct DataError : Error {
    using Error::Error;
};

/// Malformed input file; message carries the byte offset.
struct ParseError : Error {
    using Error::Error;
};

/// An internal API contract was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Training aborted because the loss became non-finite.
struct TrainingDiverged : Error {
    using Error::Error;
};

} // namespace sgl
