// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fpa3d/rng.hpp"

namespace fpa3d {

Grammar Grammar::full() {
    Grammar g;
    g.slots.push_back({"bin", "lay", "place", "set"});
    g.slots.push_back({"blue", "green", "red", "white"});
    g.slots.push_back({"at", "by", "in", "with"});
    std::vector<std::string> letters;
    for (char ch = 'a'; ch <= 'z'; ++ch)
        if (ch != 'w') letters.emplace_back(1, ch);
    g.slots.push_back(std::move(letters));
    g.slots.push_back({"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"});
    g.slots.push_back({"again", "now", "please", "soon"});
    return g;
}

Grammar Grammar::reduced(std::size_t n) {
    Grammar g = full();
    if (n < 1 || n > g.slots.size()) throw ArgumentError("grammar: reduced slot count out of range");
    g.slots.resize(n);
    return g;
}

void Grammar::validate() const {
    if (slots.empty()) throw ArgumentError("grammar: no slots");
    for (const auto& slot : slots) {
        if (slot.empty()) throw ArgumentError("grammar: empty slot");
        std::set<std::string> seen(slot.begin(), slot.end());
        if (seen.size() != slot.size()) throw ArgumentError("grammar: duplicate word within a slot");
    }
}

std::int64_t word_frames(const std::string& word) {
    // duration scales with length, clamped to [2, 6]; the full grammar's
    // worst sentence stays within the default 24 frames
    return std::clamp<std::int64_t>(2 + static_cast<std::int64_t>(word.size()) / 2, 2, 6);
}

std::int64_t Grammar::max_sentence_frames() const {
    std::int64_t total = 0;
    for (const auto& slot : slots) {
        std::int64_t worst = 0;
        for (const auto& word : slot) worst = std::max(worst, word_frames(word));
        total += worst;
    }
    return total;
}

namespace {

// Mouth pose classes per letter. Letters in the same class are rendered
// identically, which is what makes short confusable words hard.
struct LetterPose {
    double aperture_h, aperture_w, offset_x;
};

LetterPose letter_pose(char ch) {
    switch (ch) {
        // bilabial closure
        case 'b': case 'p': case 'm': return {0.04, 0.46, 0.0};
        // rounded
        case 'o': case 'u': case 'w': return {0.22, 0.26, 0.0};
        // wide open
        case 'a': return {0.42, 0.52, 0.0};
        // mid open
        case 'e': case 'i': case 'y': return {0.26, 0.56, 0.0};
        // labiodental
        case 'f': case 'v': return {0.10, 0.50, 0.08};
        // dental/alveolar
        case 't': case 'd': case 'n': case 'l': case 's': case 'z': return {0.14, 0.48, -0.05};
        // velar
        case 'g': case 'k': case 'c': case 'q': case 'x': return {0.18, 0.42, 0.05};
        // retroflex-ish
        case 'r': case 'j': return {0.20, 0.38, -0.08};
        // glottal and the rest
        default: return {0.16, 0.44, 0.0};
    }
}

constexpr VisemeSegment kNeutral{0.02, 0.42, 0.0, 1};

} // namespace

std::vector<VisemeSegment> viseme_program(const std::string& word) {
    if (word.empty()) throw ArgumentError("viseme_program: empty word");
    const std::int64_t total = word_frames(word);
    // up to three poses: onset letter, middle letter, final letter
    std::vector<char> keys;
    keys.push_back(word.front());
    if (word.size() >= 3) keys.push_back(word[word.size() / 2]);
    if (word.size() >= 2) keys.push_back(word.back());

    std::vector<VisemeSegment> segs;
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const LetterPose pose = letter_pose(keys[i]);
        VisemeSegment seg;
        seg.aperture_h = pose.aperture_h;
        seg.aperture_w = pose.aperture_w;
        seg.offset_x = pose.offset_x;
        const auto remaining_keys = static_cast<std::int64_t>(keys.size() - i);
        seg.frames = std::max<std::int64_t>(1, (total - assigned) / remaining_keys);
        assigned += seg.frames;
        segs.push_back(seg);
    }
    // round-off frames go to the final pose
    if (assigned < total) segs.back().frames += total - assigned;
    return segs;
}

std::string sample_sentence(const Grammar& grammar, std::uint64_t seed, std::uint64_t index) {
    grammar.validate();
    const CounterRng rng(seed, "sentence");
    std::string out;
    for (std::size_t s = 0; s < grammar.slots.size(); ++s) {
        const auto& slot = grammar.slots[s];
        const auto pick = rng.below(index * 16 + s, slot.size());
        if (!out.empty()) out += ' ';
        out += slot[static_cast<std::size_t>(pick)];
    }
    return out;
}

namespace {

void draw_ellipse(float* frame, std::int64_t h, std::int64_t w, const VisemeSegment& seg) {
    // lips centered slightly below the middle; outline ring plus darker cavity
    const double cy = 0.55 * static_cast<double>(h - 1);
    const double cx = (0.5 + seg.offset_x) * static_cast<double>(w - 1);
    const double ry = std::max(0.5, seg.aperture_h * 0.5 * static_cast<double>(h));
    const double rx = std::max(0.5, seg.aperture_w * 0.5 * static_cast<double>(w));
    const double ring = 1.5; // lip thickness in pixels

    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double dy = (static_cast<double>(y) - cy) / ry;
            const double dx = (static_cast<double>(x) - cx) / rx;
            const double d = std::sqrt(dx * dx + dy * dy); // 1.0 on the ellipse
            // signed distance in pixels, approximated via the smaller radius
            const double px = (d - 1.0) * std::min(rx, ry);
            double v;
            if (px > ring) {
                v = 0.15; // background / skin
            } else if (px > -ring) {
                // anti-aliased bright lip ring
                const double a = 1.0 - std::abs(px) / ring;
                v = 0.15 + 0.75 * a;
            } else {
                v = 0.05; // mouth cavity
            }
            frame[y * w + x] = static_cast<float>(v);
        }
    }
}

} // namespace

Tensor<float> render_video(const std::string& sentence, const RenderConfig& config, std::uint64_t noise_seed) {
    std::istringstream is(sentence);
    std::string word;
    std::vector<VisemeSegment> segs;
    std::int64_t total = 0;
    while (is >> word) {
        const auto prog = viseme_program(word);
        for (const auto& s : prog) {
            segs.push_back(s);
            total += s.frames;
        }
    }
    if (total > config.t)
        throw ArgumentError("render_video: sentence needs " + std::to_string(total) + " frames but config has " +
                            std::to_string(config.t));

    Tensor<float> video(Shape5{1, 1, config.t, config.h, config.w});
    std::int64_t t = 0;
    auto render_frame = [&](const VisemeSegment& seg) {
        draw_ellipse(&video.data[video.index(0, 0, t, 0, 0)], config.h, config.w, seg);
        ++t;
    };
    for (const auto& seg : segs)
        for (std::int64_t f = 0; f < seg.frames && t < config.t; ++f) render_frame(seg);
    while (t < config.t) render_frame(kNeutral);

    if (config.noise_sigma > 0.0) {
        const CounterRng rng(noise_seed, "render.noise");
        for (std::size_t i = 0; i < video.data.size(); ++i) {
            const double v = static_cast<double>(video.data[i]) + config.noise_sigma * rng.normal(i);
            video.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return video;
}

CorpusManifest gen_corpus(const Grammar& grammar, std::int64_t n, std::uint64_t seed,
                          const std::string& out_dir, const RenderConfig& config) {
    if (n < 1) throw ArgumentError("gen_corpus: n must be >= 1");
    grammar.validate();
    if (grammar.max_sentence_frames() > config.t)
        throw ArgumentError("gen_corpus: grammar needs up to " + std::to_string(grammar.max_sentence_frames()) +
                            " frames per sentence, config has " + std::to_string(config.t));

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw FormatError("gen_corpus: cannot create output directory " + out_dir);

    CorpusManifest manifest;
    manifest.entries.resize(static_cast<std::size_t>(n));
    const CounterRng split(seed, "split");
    std::exception_ptr error;

#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const std::string sentence = sample_sentence(grammar, seed, static_cast<std::uint64_t>(i));
            const auto video = render_video(sentence, config, mix64(seed + static_cast<std::uint64_t>(i)));
            const std::string vpath = (fs::path(out_dir) / ("vid_" + std::to_string(i) + ".vid5")).string();
            save_vid5(vpath, video);
            std::ofstream label(fs::path(out_dir) / ("vid_" + std::to_string(i) + ".txt"));
            label << sentence << "\n";

            auto& entry = manifest.entries[static_cast<std::size_t>(i)];
            entry.path = vpath;
            entry.sentence = sentence;
            entry.is_val = split.below(static_cast<std::uint64_t>(i), 10) == 0;
        } catch (...) {
#pragma omp critical
            {
                if (!error) error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);

    std::ofstream all(fs::path(out_dir) / "manifest.tsv");
    std::ofstream train(fs::path(out_dir) / "train.tsv");
    std::ofstream val(fs::path(out_dir) / "val.tsv");
    if (!all || !train || !val) throw FormatError("gen_corpus: cannot write manifests in " + out_dir);
    for (const auto& e : manifest.entries) {
        all << e.path << "\t" << e.sentence << "\n";
        (e.is_val ? val : train) << e.path << "\t" << e.sentence << "\n";
    }
    return manifest;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open manifest " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError("manifest line without tab: " + line);
        out.push_back({line.substr(0, tab), line.substr(tab + 1), false});
    }
    return out;
}

} // namespace fpa3d
