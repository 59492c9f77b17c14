// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpa3d/tensor.hpp"

namespace fpa3d {

// Slot-structured sentence template. The full grammar mirrors the fixed
// command + color + preposition + letter + digit + adverb pattern
// (4/4/4/25/10/4 words).
struct Grammar {
    std::vector<std::vector<std::string>> slots;

    static Grammar full();
    // First `n` slots of the full grammar (reduced corpora for smoke runs).
    static Grammar reduced(std::size_t n);

    void validate() const;
    // Worst-case rendered frame count over all sentences.
    std::int64_t max_sentence_frames() const;
};

// One mouth pose held for a few frames: ellipse aperture (fractions of the
// frame) and a horizontal offset.
struct VisemeSegment {
    double aperture_h = 0.0;
    double aperture_w = 0.5;
    double offset_x = 0.0;
    std::int64_t frames = 2;
};

// Deterministic per-word pose program derived from the word's letters, so
// words sharing prefixes share initial poses (confusable by construction).
std::vector<VisemeSegment> viseme_program(const std::string& word);

std::int64_t word_frames(const std::string& word);

// One uniform word per slot, joined with spaces; reproducible from the seed.
std::string sample_sentence(const Grammar& grammar, std::uint64_t seed, std::uint64_t index = 0);

struct RenderConfig {
    std::int64_t t = 24, h = 32, w = 32;
    double noise_sigma = 0.02;
};

// Grayscale frames: anti-aliased filled ellipse per pose plus seeded Gaussian
// noise, clamped to [0, 1]. The tail is padded with neutral (closed) frames.
Tensor<float> render_video(const std::string& sentence, const RenderConfig& config, std::uint64_t noise_seed);

struct ManifestEntry {
    std::string path;
    std::string sentence;
    bool is_val = false;
};

struct CorpusManifest {
    std::vector<ManifestEntry> entries;
};

// Writes n VID5 videos, per-video label files, manifest.tsv (all entries) and
// train.tsv / val.tsv split by a seed-derived hash (90/10).
CorpusManifest gen_corpus(const Grammar& grammar, std::int64_t n, std::uint64_t seed,
                          const std::string& out_dir, const RenderConfig& config);

// Parses "<video-path>\t<sentence>" lines.
std::vector<ManifestEntry> load_manifest(const std::string& path);

} // namespace fpa3d
