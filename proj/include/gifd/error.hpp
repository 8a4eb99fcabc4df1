#ifndef GIFD_ERROR_HPP_
#define GIFD_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace gifd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed call: shape mismatch, empty batch, out-of-range index.
class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error("input error: " + what) {}
};

/// Invalid configuration or parameters (maps to CLI exit code 1).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

/// The attacker could not infer a transformation from the received report.
class InferenceError : public Error {
public:
    explicit InferenceError(const std::string& what) : Error("inference error: " + what) {}
};

/// Label extraction failed (e.g. all-zero classification-layer gradient).
class ExtractionError : public Error {
public:
    explicit ExtractionError(const std::string& what) : Error("extraction error: " + what) {}
};

/// Anything that went wrong while running (I/O, all trials failed, ...).
class RuntimeFailure : public Error {
public:
    explicit RuntimeFailure(const std::string& what) : Error(what) {}
};

}  // namespace gifd

#endif  // GIFD_ERROR_HPP_
