// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fpa3d/errors.hpp"
#include "fpa3d/metrics.hpp"
#include "fpa3d/rng.hpp"

using namespace fpa3d;

namespace {

std::vector<std::string> chars_of(const std::string& s) { return tokenize(s, Tokenize::chars); }

// Exhaustive recursive Levenshtein, memoized; the independent oracle.
std::int64_t edit_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b,
                         std::size_t i, std::size_t j,
                         std::map<std::pair<std::size_t, std::size_t>, std::int64_t>& memo) {
    if (i == a.size()) return static_cast<std::int64_t>(b.size() - j);
    if (j == b.size()) return static_cast<std::int64_t>(a.size() - i);
    const auto key = std::make_pair(i, j);
    const auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    std::int64_t best = edit_oracle(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, edit_oracle(a, b, i + 1, j, memo) + 1);
    best = std::min(best, edit_oracle(a, b, i, j + 1, memo) + 1);
    memo[key] = best;
    return best;
}

std::int64_t edit_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::map<std::pair<std::size_t, std::size_t>, std::int64_t> memo;
    return edit_oracle(a, b, 0, 0, memo);
}

std::vector<std::string> random_tokens(std::uint64_t seed, std::size_t max_len) {
    const CounterRng rng(seed, "tok");
    const std::size_t len = rng.below(0, max_len + 1);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < len; ++i) out.emplace_back(1, static_cast<char>('a' + rng.below(i + 1, 4)));
    return out;
}

} // namespace

TEST_CASE("edit distance basics") {
    CHECK(edit_distance(chars_of("abc"), chars_of("abc")) == 0);
    CHECK(edit_distance(chars_of("kitten"), chars_of("sitting")) == 3);
    CHECK(edit_oracle(chars_of("kitten"), chars_of("sitting")) == 3);
    CHECK(edit_distance({}, chars_of("abcd")) == 4);
    CHECK(edit_distance(chars_of("xy"), {}) == 2);
}

TEST_CASE("edit distance matches the recursive oracle on 1000 random pairs") {
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const auto a = random_tokens(i * 2 + 1, 8);
        const auto b = random_tokens(i * 2 + 2, 8);
        CHECK(edit_distance(a, b) == edit_oracle(a, b));
    }
}

TEST_CASE("edit distance is a metric") {
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto a = random_tokens(i * 3 + 1, 6);
        const auto b = random_tokens(i * 3 + 2, 6);
        const auto c = random_tokens(i * 3 + 3, 6);
        CHECK(edit_distance(a, b) == edit_distance(b, a));
        CHECK((edit_distance(a, b) == 0) == (a == b));
        CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    }
}

TEST_CASE("error rates") {
    CHECK(error_rate({"bin blue"}, {"bin blue"}, Tokenize::words) == 0.0);
    CHECK(error_rate({"bin red"}, {"bin blue"}, Tokenize::words) == doctest::Approx(0.5));
    CHECK(error_rate({"abc"}, {"axc"}, Tokenize::chars) == doctest::Approx(1.0 / 3.0));
    // corpus-level and order invariant
    const std::vector<std::string> h{"a b", "c d e"}, r{"a x", "c d e"};
    CHECK(error_rate(h, r, Tokenize::words) == doctest::Approx(1.0 / 5.0));
    const std::vector<std::string> h2{"c d e", "a b"}, r2{"c d e", "a x"};
    CHECK(error_rate(h2, r2, Tokenize::words) == error_rate(h, r, Tokenize::words));
    CHECK_THROWS_AS(error_rate({}, {}, Tokenize::words), ArgumentError);
    CHECK_THROWS_AS(error_rate({"a"}, {"a", "b"}, Tokenize::words), ArgumentError);
}

TEST_CASE("cer includes the space character") {
    // "a b" vs "axb": substituting the space is one edit out of three chars
    CHECK(error_rate({"a b"}, {"axb"}, Tokenize::chars) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("bleu") {
    const std::vector<std::string> refs{"bin blue at a zero again", "lay red by b one now"};
    CHECK(bleu(refs, refs) == 1.0);
    CHECK(bleu({"x y z w", "v u q p"}, refs) == 0.0);

    // brevity penalty closed form: 4 vs 5 tokens, all precisions 1
    CHECK(bleu({"a b c d"}, {"a b c d e"}) == doctest::Approx(std::exp(-0.25)).epsilon(1e-12));

    // bleu == 1 iff exact match
    CHECK(bleu({"a b c d"}, {"a b d c"}) < 1.0);
}

TEST_CASE("per-slot WER") {
    const std::vector<std::string> refs{"bin blue at a one now", "lay red by b two soon"};
    const auto perfect = per_slot_wer(refs, refs, 6);
    for (double v : perfect) CHECK(v == 0.0);

    const std::vector<std::string> hyps{"bin blue at a nine now", "lay red by b two soon"};
    const auto w = per_slot_wer(hyps, refs, 6);
    CHECK(w[4] == doctest::Approx(0.5));
    for (std::size_t s : {0u, 1u, 2u, 3u, 5u}) CHECK(w[s] == 0.0);

    // short hypotheses count missing slots as errors
    const auto miss = per_slot_wer({"bin blue", "lay red by b two soon"}, refs, 6);
    CHECK(miss[5] == doctest::Approx(0.5));
    CHECK_THROWS_AS(per_slot_wer(refs, {"too short", "lay red by b two soon"}, 6), ArgumentError);
}

TEST_CASE("report line format") {
    EvalReport r;
    r.cer = 0.125;
    r.wer = 0.25;
    r.bleu = 0.5;
    r.slot_wer = {0.0, 1.0};
    CHECK(r.to_line() == "cer=0.125 wer=0.25 bleu=0.5 wer1=0 wer2=1");

    const std::vector<std::string> refs{"bin blue", "lay red"};
    const auto full = evaluate_corpus(refs, refs, 2);
    CHECK(full.cer == 0.0);
    CHECK(full.wer == 0.0);
    CHECK(full.bleu == 1.0);
}
