// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fpa3d/mat.hpp"

namespace fpa3d {

// Character inventory; the CTC blank is the reserved last index and is not a
// member of `symbols`.
struct Alphabet {
    std::string symbols;

    // 26 letters plus space; with the blank that makes 28 classes.
    static Alphabet lipreading() { return Alphabet{"abcdefghijklmnopqrstuvwxyz "}; }

    int blank_index() const { return static_cast<int>(symbols.size()); }
    int num_classes() const { return static_cast<int>(symbols.size()) + 1; }

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& indices) const;
};

// Minimum number of frames that can emit the label: its length plus one
// separator blank per adjacent duplicate pair.
std::int64_t ctc_min_frames(const std::vector<int>& label);

template <typename T>
struct CtcResult {
    T loss = T(0);
    Mat<T> grad_log_probs; // same shape as the input rows
};

// Forward-backward CTC in log space. Rows of log_probs must be normalized
// log-probabilities (checked loosely so finite-difference probes stay legal).
// The gradient treats every log-probability entry as a free variable.
template <typename T>
CtcResult<T> ctc_loss_grad(const Mat<T>& log_probs, const std::vector<int>& label);

// Enumerates every length-t class sequence and sums the probability of those
// collapsing to the label. Small instances only (num_classes^t <= 1e6).
template <typename T>
T ctc_brute_force(const Mat<T>& log_probs, const std::vector<int>& label);

// Per-timestep argmax (ties to the lowest index), collapse repeats, strip
// blanks.
template <typename T>
std::string greedy_decode(const Mat<T>& log_probs, const Alphabet& alphabet);

} // namespace fpa3d
