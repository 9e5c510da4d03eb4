#pragma once

#include <stdexcept>
#include <string>

namespace bsdgan {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable input or unusable raw data.
class IngestionError : public Error {
public:
    using Error::Error;
};

/// Input parsed but violates the expected layout (wrong instance length, bad manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Architecture descriptor cannot produce a shape-closed encoder/decoder pair.
class DescriptorError : public Error {
public:
    using Error::Error;
};

/// Tensor or parameter shape disagrees with what a network expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

class PriorError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingArtifactError : public Error {
public:
    using Error::Error;
};

} // namespace bsdgan
