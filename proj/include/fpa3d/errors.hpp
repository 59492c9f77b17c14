// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fpa3d {

// Rank/extent mismatches, empty convolution or pooling outputs.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Element counts that overflow the index type.
struct SizeError : std::runtime_error {
    explicit SizeError(const std::string& msg) : std::runtime_error("size error: " + msg) {}
};

// Malformed files: bad magic, truncation, unsupported version.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

// Non-finite values or violated numeric contracts (unnormalized rows,
// degenerate batches, infeasible CTC targets).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Bad caller-supplied arguments: unknown word, missing module at a position.
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

// Internal consistency failures: stale caches, out-of-range argmax indices.
struct CorruptionError : std::runtime_error {
    explicit CorruptionError(const std::string& msg) : std::runtime_error("corruption error: " + msg) {}
};

} // namespace fpa3d
