// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fpa3d {

enum class Tokenize { chars, words };

// Unit-cost Levenshtein distance over token sequences.
std::int64_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

std::vector<std::string> tokenize(const std::string& text, Tokenize how);

// Corpus-level, length-weighted: sum of edit distances over sum of reference
// lengths. CER tokenization includes the space character.
double error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, Tokenize how);

// Corpus BLEU, n-grams up to min(4, shortest reference length), uniform
// weights, clipped counts, multiplicative brevity penalty.
double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// Positional per-slot word error fractions; references must have exactly
// `slots` words, short hypotheses count missing slots as errors.
std::vector<double> per_slot_wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                 std::size_t slots);

struct EvalReport {
    double cer = 0.0, wer = 0.0, bleu = 0.0;
    std::vector<double> slot_wer;

    // "cer=... wer=... bleu=... wer1=... ... werK=..."
    std::string to_line() const;
};

EvalReport evaluate_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                           std::size_t slots);

} // namespace fpa3d
