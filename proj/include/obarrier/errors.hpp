#pragma once

#include <stdexcept>
#include <string>

namespace obarrier {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

/// A sampled point landed in two sets that must be disjoint (I/U, T/U, O/U, O/T).
class WellPosednessError : public Error {
public:
    using Error::Error;
};

/// No grid node lies inside the initial set.
class NoInitialNode : public Error {
public:
    using Error::Error;
};

class DegreeTooLow : public Error {
public:
    using Error::Error;
};

class BasisTooLarge : public Error {
public:
    using Error::Error;
};

class VerificationFailed : public Error {
public:
    using Error::Error;
};

class SynthesisFailed : public Error {
public:
    using Error::Error;
};

class VanishingObservationProbability : public Error {
public:
    using Error::Error;
};

class InvalidObservation : public Error {
public:
    using Error::Error;
};

class TooFewAccepted : public Error {
public:
    TooFewAccepted(const std::string& what, long long accepted)
        : Error(what), accepted_(accepted) {}
    long long accepted() const noexcept { return accepted_; }

private:
    long long accepted_;
};

/// Line-oriented input could not be parsed; carries the 1-based line number.
class MalformedInput : public Error {
public:
    MalformedInput(const std::string& what, long long line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    long long line() const noexcept { return line_; }

private:
    long long line_;
};

}  // namespace obarrier
