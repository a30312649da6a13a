#pragma once

#include <stdexcept>
#include <string>

namespace ssf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (shapes, non-finite values, zero-norm rows).
class InputError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: unknown keys, bad layer indices, out-of-range knobs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A computation has no meaningful result for this input (e.g. rank-deficient PCA).
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// Mutual scoring needs evidence from at least two images.
class CannotScoreError : public Error {
public:
    using Error::Error;
};

/// A metric is not defined for the given labels (single class, no anomalous pixels).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; the message always names the offending path.
class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what);
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace ssf
