#pragma once

#include <stdexcept>
#include <string>

namespace mmg {

// Root of the library's exception hierarchy.  Everything we throw on
// purpose derives from this, so callers can catch one type at the top
// of a command handler and still distinguish subclasses when they care.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank mismatch in a tensor operation.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A graph node ended up with no usable neighbours where at least one is
// required (e.g. softmax over an empty attention neighbourhood).
class IsolatedNodeError : public Error {
public:
    explicit IsolatedNodeError(const std::string& msg) : Error(msg) {}
};

// Cosine similarity against a zero-norm vector under the policy that
// treats this as a hard failure.
class ZeroNormError : public Error {
public:
    explicit ZeroNormError(const std::string& msg) : Error(msg) {}
};

// Missing or unreadable file.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Malformed or truncated file contents (episode blobs, checkpoints,
// exported graphs): bad magic, header/shape mismatch, short reads.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// An index referencing something out of range (e.g. a region naming a
// patch index >= N, a label >= K).
class IndexError : public Error {
public:
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

// Bad user-supplied configuration (CLI flags, config files).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

} // namespace mmg
