// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fpa3d/synthdata.hpp"
#include "test_util.hpp"

using namespace fpa3d;
using fpa3d::testutil::bitwise_equal;

TEST_CASE("full grammar mirrors the six-slot template") {
    const Grammar g = Grammar::full();
    REQUIRE(g.slots.size() == 6);
    CHECK(g.slots[0].size() == 4);
    CHECK(g.slots[1].size() == 4);
    CHECK(g.slots[2].size() == 4);
    CHECK(g.slots[3].size() == 25); // letters without w
    CHECK(g.slots[4].size() == 10);
    CHECK(g.slots[5].size() == 4);
    g.validate();
    CHECK(g.max_sentence_frames() <= 24);

    CHECK(Grammar::reduced(2).slots.size() == 2);
    CHECK_THROWS_AS(Grammar::reduced(7), ArgumentError);
}

TEST_CASE("word durations are in [2,6] and vary") {
    const Grammar g = Grammar::full();
    std::set<std::int64_t> seen;
    for (const auto& slot : g.slots)
        for (const auto& word : slot) {
            const std::int64_t d = word_frames(word);
            CHECK(d >= 2);
            CHECK(d <= 6);
            seen.insert(d);
            std::int64_t total = 0;
            for (const auto& seg : viseme_program(word)) {
                CHECK(seg.frames >= 1);
                total += seg.frames;
            }
            CHECK(total == d);
        }
    CHECK(seen.size() >= 3); // short and long words take different durations
}

TEST_CASE("confusable words share their onset pose") {
    const auto bin = viseme_program("bin");
    const auto blue = viseme_program("blue"); // both start with the bilabial 'b'
    CHECK(bin.front().aperture_h == blue.front().aperture_h);
    CHECK(bin.front().aperture_w == blue.front().aperture_w);
}

TEST_CASE("sampling is uniform per slot and reproducible") {
    const Grammar g = Grammar::full();
    CHECK(sample_sentence(g, 5, 0) == sample_sentence(g, 5, 0));
    {
        std::istringstream is(sample_sentence(g, 5, 0));
        std::string w;
        int n = 0;
        while (is >> w) ++n;
        CHECK(n == 6);
    }

    std::map<std::string, int> freq;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        const std::string s = sample_sentence(g, 123, static_cast<std::uint64_t>(i));
        freq[s.substr(0, s.find(' '))]++;
    }
    for (const auto& word : g.slots[0]) {
        const double p = static_cast<double>(freq[word]) / trials;
        CHECK(p == doctest::Approx(0.25).epsilon(0.08));
    }
}

TEST_CASE("rendering is deterministic, clamped and total") {
    const Grammar g = Grammar::full();
    RenderConfig rc;
    const auto a = render_video("bin blue at a zero again", rc, 7);
    const auto b = render_video("bin blue at a zero again", rc, 7);
    CHECK(bitwise_equal(a, b));
    CHECK(a.shape == Shape5{1, 1, 24, 32, 32});
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    // noise-free neutral rendering is constant over padded tail frames
    RenderConfig quiet;
    quiet.noise_sigma = 0.0;
    const auto q = render_video("at", quiet, 0);
    for (std::int64_t h = 0; h < 32; ++h)
        for (std::int64_t w = 0; w < 32; ++w)
            CHECK(q.at(0, 0, 20, h, w) == q.at(0, 0, 23, h, w));

    // every sentence in the grammar renders
    for (const auto& slot : g.slots)
        for (const auto& word : slot) CHECK_NOTHROW(render_video(word, rc, 1));

    CHECK_THROWS_AS(render_video("bin blue", RenderConfig{4, 32, 32, 0.0}, 1), ArgumentError);
}

TEST_CASE("gen_corpus writes videos, labels and manifests with a 90/10 split") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fpa3d_corpus_test";
    fs::remove_all(dir);

    const Grammar g = Grammar::reduced(2);
    RenderConfig rc;
    rc.t = 12;
    rc.h = 16;
    rc.w = 16;
    const auto manifest = gen_corpus(g, 500, 7, dir.string(), rc);
    CHECK(manifest.entries.size() == 500);

    std::int64_t val = 0;
    for (const auto& e : manifest.entries) val += e.is_val ? 1 : 0;
    const double frac = static_cast<double>(val) / 500.0;
    CHECK(frac > 0.05);
    CHECK(frac < 0.15);

    const auto lines = load_manifest((dir / "manifest.tsv").string());
    CHECK(lines.size() == 500);
    CHECK(fs::exists(dir / "vid_0.vid5"));
    CHECK(fs::exists(dir / "vid_0.txt"));
    const auto video = load_vid5(lines[0].path);
    CHECK(video.shape == Shape5{1, 1, 12, 16, 16});

    const auto train = load_manifest((dir / "train.tsv").string());
    const auto valm = load_manifest((dir / "val.tsv").string());
    CHECK(train.size() + valm.size() == 500);

    // regeneration is byte-identical
    const auto dir2 = fs::temp_directory_path() / "fpa3d_corpus_test2";
    fs::remove_all(dir2);
    gen_corpus(g, 20, 7, dir2.string(), rc);
    const auto dir3 = fs::temp_directory_path() / "fpa3d_corpus_test3";
    fs::remove_all(dir3);
    gen_corpus(g, 20, 7, dir3.string(), rc);
    for (int i = 0; i < 20; ++i) {
        std::ifstream f2(dir2 / ("vid_" + std::to_string(i) + ".vid5"), std::ios::binary);
        std::ifstream f3(dir3 / ("vid_" + std::to_string(i) + ".vid5"), std::ios::binary);
        const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        const std::string b3((std::istreambuf_iterator<char>(f3)), std::istreambuf_iterator<char>());
        CHECK(b2 == b3);
        CHECK(!b2.empty());
    }

    CHECK_THROWS_AS(gen_corpus(g, 0, 1, dir.string(), rc), ArgumentError);
    // 6-slot sentences cannot fit in 8 frames
    RenderConfig tight;
    tight.t = 8;
    CHECK_THROWS_AS(gen_corpus(Grammar::full(), 3, 1, dir.string(), tight), ArgumentError);
}
