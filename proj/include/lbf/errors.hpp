#pragma once

#include <stdexcept>
#include <string>

namespace lbf {

// Base class for every error raised by the library. Subclasses distinguish
// the failure category; the message carries the specifics.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An operation received an empty cloud or set where at least one element is required.
struct EmptyInput : Error {
    using Error::Error;
};

// Geometry is too degenerate to process (collinear PCA input, zero-extent bbox, ...).
struct DegenerateGeometry : Error {
    using Error::Error;
};

// A neighborhood has too few points for the requested operation.
struct InsufficientNeighbors : Error {
    using Error::Error;
};

// Model architecture does not match the data or configuration it is applied to.
struct ConfigMismatch : Error {
    using Error::Error;
};

// A configuration value is out of its valid range.
struct ConfigError : Error {
    using Error::Error;
};

// Model file is corrupt, truncated, or has an unsupported format version.
struct ModelFormatError : Error {
    using Error::Error;
};

// An API was called in an invalid order (e.g. backward before forward).
struct UsageError : Error {
    using Error::Error;
};

// A training shape is missing required per-point normals.
struct MissingNormals : Error {
    using Error::Error;
};

// Training produced a non-finite loss; the message identifies the sample.
struct TrainingDiverged : Error {
    using Error::Error;
};

// Text input could not be parsed; carries the 1-based line number.
struct ParseError : Error {
    ParseError(const std::string& what, long line_number)
        : Error(what + " (line " + std::to_string(line_number) + ")"), line(line_number) {}
    long line;
};

}  // namespace lbf
