#pragma once

#include <stdexcept>
#include <string>

namespace ffvit {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameters or malformed key=value configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Tensor shape, rank, or dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// A token-mixing layer received a sequence length other than the one its
// weights were built for. Kept separate from ShapeError: the fixed-length
// constraint is an architectural property, not a plumbing bug.
struct SequenceLengthError : Error {
    using Error::Error;
};

// Index out of range (e.g. a class label outside [0, C)).
struct IndexError : Error {
    using Error::Error;
};

// Byte-level parse failure in an on-disk format (bad magic, short read).
struct FormatError : Error {
    using Error::Error;
};

// Parsed fine but the pieces disagree (e.g. image/label counts differ).
struct ConsistencyError : Error {
    using Error::Error;
};

// A checkpoint that parses but does not match its embedded config.
struct CorruptionError : Error {
    using Error::Error;
};

// Missing or invalid runtime state (absent gradient, non-finite loss).
struct StateError : Error {
    using Error::Error;
};

// Resource exhaustion, e.g. a benchmark geometry that does not fit memory.
struct ResourceError : Error {
    using Error::Error;
};

// Filesystem failure while writing logs or checkpoints.
struct IoError : Error {
    using Error::Error;
};

}  // namespace ffvit
