#pragma once

#include <stdexcept>
#include <string>

namespace relcp {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input file could not be read/written.
struct IoError : Error {
    using Error::Error;
};

// Malformed schema file, CSV cell, config, or checkpoint text.
struct ParseError : Error {
    using Error::Error;
};

// Schema-level invariant violation: duplicate table, unresolvable FK target,
// zero or multiple primary keys, bad time attribute.
struct SchemaError : Error {
    using Error::Error;
};

// Referential-integrity violation raised when loading or rebuilding data.
struct IntegrityError : Error {
    using Error::Error;
};

struct UnknownColumn : Error {
    using Error::Error;
};

// Marginals and corruption are defined over value columns only.
struct KeyColumnNotAllowed : Error {
    using Error::Error;
};

struct InvalidNode : Error {
    using Error::Error;
};

struct TypeMismatch : Error {
    using Error::Error;
};

struct EmptyGraph : Error {
    using Error::Error;
};

struct UnknownSeedType : Error {
    using Error::Error;
};

struct InvalidSeed : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct NotScalar : Error {
    using Error::Error;
};

struct DetachedOutput : Error {
    using Error::Error;
};

struct UnfittedEncoder : Error {
    using Error::Error;
};

// Corruption needs at least one observed value to draw from.
struct EmptyMarginal : Error {
    using Error::Error;
};

struct NegativeIsLinked : Error {
    using Error::Error;
};

struct UndefinedContext : Error {
    using Error::Error;
};

struct EmptySubgraph : Error {
    using Error::Error;
};

struct SingleClass : Error {
    using Error::Error;
};

struct LengthMismatch : Error {
    using Error::Error;
};

struct EmptyInput : Error {
    using Error::Error;
};

struct RegimeMismatch : Error {
    using Error::Error;
};

struct VersionMismatch : Error {
    using Error::Error;
};

struct CorruptPayload : Error {
    using Error::Error;
};

}  // namespace relcp
