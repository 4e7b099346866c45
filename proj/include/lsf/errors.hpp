#pragma once

#include <stdexcept>
#include <string>

namespace lsf {

// Base for all library errors so callers can catch lsf failures wholesale.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Operation variant outside the supported set (e.g. conv kernel size).
struct UnsupportedOpError : Error {
    using Error::Error;
};

// API precondition broken (non-scalar loss, bad argument combination).
struct ContractError : Error {
    using Error::Error;
};

// NaN/Inf surfaced by a forward or backward computation.
struct NumericError : Error {
    using Error::Error;
};

// Batch with no usable entries (all-ignored rows, empty feature set).
struct DegenerateBatchError : Error {
    using Error::Error;
};

// Class with zero samples where at least one is required.
struct DegenerateClassError : Error {
    using Error::Error;
};

// Attempt to update a prototype frozen for dispersion.
struct FrozenClassError : Error {
    using Error::Error;
};

// Class id absent from the store or plan.
struct UnknownClassError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Shapes could not be placed without overlap within the retry budget.
struct PlacementError : Error {
    using Error::Error;
};

// Metric requested outside its domain (e.g. F with no deleted classes).
struct UndefinedMetricError : Error {
    using Error::Error;
};

// Checkpoint blob does not match its manifest (checksum, truncation).
struct CorruptCheckpointError : Error {
    using Error::Error;
};

// Checkpoint manifest is missing required entries or fields.
struct SchemaError : Error {
    using Error::Error;
};

}  // namespace lsf
