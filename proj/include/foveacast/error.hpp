#pragma once

#include <stdexcept>
#include <string>

namespace foveacast {

// Error taxonomy shared across the library. The CLI maps these onto its
// stable exit codes (usage=2, io=3, numeric=4, artifact=5).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

struct ZeroNorm : Error {
    explicit ZeroNorm(const std::string& msg) : Error("zero norm: " + msg) {}
};

struct DegenerateBounds : Error {
    explicit DegenerateBounds(const std::string& msg) : Error("degenerate bounds: " + msg) {}
};

struct ParseError : Error {
    long line;
    ParseError(long line_, const std::string& msg)
        : Error("parse error at line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

struct MissingColumn : Error {
    explicit MissingColumn(const std::string& msg) : Error("missing column: " + msg) {}
};

struct NonMonotonicTimestamp : Error {
    explicit NonMonotonicTimestamp(const std::string& session)
        : Error("non-monotonic timestamps in session " + session) {}
};

struct NoOverlap : Error {
    explicit NoOverlap(const std::string& msg) : Error("no temporal overlap: " + msg) {}
};

struct CountMismatch : Error {
    explicit CountMismatch(const std::string& msg) : Error("count mismatch: " + msg) {}
};

struct EmptySequence : Error {
    explicit EmptySequence(const std::string& msg) : Error("empty sequence: " + msg) {}
};

struct EmptyInput : Error {
    explicit EmptyInput(const std::string& msg) : Error("empty input: " + msg) {}
};

struct ModeMismatch : Error {
    explicit ModeMismatch(const std::string& msg) : Error("scene mode mismatch: " + msg) {}
};

struct MissingForwardCache : Error {
    explicit MissingForwardCache(const std::string& msg)
        : Error("backward without forward cache: " + msg) {}
};

struct NonFinite : Error {
    explicit NonFinite(const std::string& msg) : Error("non-finite value: " + msg) {}
};

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& msg) : Error("non-finite loss: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

struct VersionMismatch : Error {
    explicit VersionMismatch(const std::string& msg) : Error("version mismatch: " + msg) {}
};

struct CorruptManifest : Error {
    explicit CorruptManifest(const std::string& msg) : Error("corrupt manifest: " + msg) {}
};

}  // namespace foveacast
