// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fpa3d/ctc.hpp"
#include "fpa3d/rng.hpp"

using namespace fpa3d;

namespace {

// Rows of normalized log-probs from random logits.
Mat<double> random_log_probs(std::int64_t t, std::int64_t classes, std::uint64_t seed) {
    Mat<double> lp(t, classes);
    const CounterRng rng(seed, "ctc");
    for (std::int64_t r = 0; r < t; ++r) {
        double mx = -1e30;
        for (std::int64_t k = 0; k < classes; ++k) {
            lp.at(r, k) = rng.uniform(static_cast<std::uint64_t>(r * classes + k), -2.0, 2.0);
            mx = std::max(mx, lp.at(r, k));
        }
        double sum = 0.0;
        for (std::int64_t k = 0; k < classes; ++k) sum += std::exp(lp.at(r, k) - mx);
        const double lse = mx + std::log(sum);
        for (std::int64_t k = 0; k < classes; ++k) lp.at(r, k) -= lse;
    }
    return lp;
}

Mat<double> uniform_log_probs(std::int64_t t, std::int64_t classes) {
    Mat<double> lp(t, classes);
    for (auto& v : lp.data) v = -std::log(static_cast<double>(classes));
    return lp;
}

} // namespace

TEST_CASE("single timestep, single symbol") {
    const auto lp = random_log_probs(1, 3, 4);
    const auto res = ctc_loss_grad(lp, {0});
    CHECK(res.loss == doctest::Approx(-lp.at(0, 0)));
}

TEST_CASE("two uniform timesteps over {a, blank}: paths aa, a-, -a") {
    const auto lp = uniform_log_probs(2, 2);
    const auto res = ctc_loss_grad(lp, {0});
    CHECK(res.loss == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
    CHECK(ctc_brute_force(lp, {0}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("matches brute force on the exhaustive small grid") {
    for (std::int64_t classes : {2, 3}) {
        for (std::int64_t t = 1; t <= 4; ++t) {
            for (std::int64_t l1 = 0; l1 < classes - 1; ++l1) {
                for (std::int64_t l2 = -1; l2 < classes - 1; ++l2) {
                    std::vector<int> label{static_cast<int>(l1)};
                    if (l2 >= 0) label.push_back(static_cast<int>(l2));
                    if (t < ctc_min_frames(label)) continue;
                    const auto lp = random_log_probs(t, classes, static_cast<std::uint64_t>(
                                                                     classes * 1000 + t * 100 + l1 * 10 + l2 + 1));
                    const double fast = ctc_loss_grad(lp, label).loss;
                    const double brute = ctc_brute_force(lp, label);
                    CHECK(std::abs(fast - brute) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("gradient matches finite differences at 1e-6") {
    Mat<double> lp = random_log_probs(4, 3, 77);
    const std::vector<int> label{0, 1};
    const auto res = ctc_loss_grad(lp, label);
    const double h = 1e-6;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < lp.data.size(); ++i) {
        const double saved = lp.data[i];
        lp.data[i] = saved + h;
        const double up = ctc_loss_grad(lp, label).loss;
        lp.data[i] = saved - h;
        const double down = ctc_loss_grad(lp, label).loss;
        lp.data[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = res.grad_log_probs.data[i];
        max_rel = std::max(max_rel, std::abs(numeric - analytic) /
                                        std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("negated gradient is a per-timestep distribution") {
    const auto lp = random_log_probs(6, 4, 9);
    const auto res = ctc_loss_grad(lp, {0, 2, 1});
    for (std::int64_t t = 0; t < 6; ++t) {
        double sum = 0.0;
        for (std::int64_t k = 0; k < 4; ++k) sum += -res.grad_log_probs.at(t, k);
        CHECK(std::abs(sum - 1.0) < 1e-8);
    }
}

TEST_CASE("loss is non-negative and finite for feasible labels") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto lp = random_log_probs(8, 5, seed);
        const auto res = ctc_loss_grad(lp, {0, 1, 1, 3});
        CHECK(std::isfinite(res.loss));
        CHECK(res.loss >= 0.0);
    }
}

TEST_CASE("log-space recursion survives tiny probabilities") {
    Mat<double> lp(10, 3);
    for (std::int64_t t = 0; t < 10; ++t) {
        // one class carries almost all mass; others ~1e-300
        for (std::int64_t k = 0; k < 3; ++k) lp.at(t, k) = -690.0;
        lp.at(t, t % 3) = -3e-298; // ~log(1)
    }
    const auto res = ctc_loss_grad(lp, {0, 1});
    CHECK(std::isfinite(res.loss));
    for (double v : res.grad_log_probs.data) CHECK(std::isfinite(v));
}

TEST_CASE("errors: infeasible, out of range, unnormalized") {
    const auto lp = uniform_log_probs(2, 3);
    CHECK_THROWS_AS(ctc_loss_grad(lp, {0, 0}), NumericError); // needs 3 frames
    CHECK_THROWS_AS(ctc_loss_grad(lp, {2}), ArgumentError);   // blank not allowed in label
    CHECK_THROWS_AS(ctc_loss_grad(lp, {}), ArgumentError);

    Mat<double> bad = lp;
    for (auto& v : bad.data) v += 0.5;
    CHECK_THROWS_AS(ctc_loss_grad(bad, {0}), NumericError);
}

TEST_CASE("brute force: impossible label has infinite loss") {
    const auto lp = uniform_log_probs(1, 3);
    CHECK(std::isinf(ctc_brute_force(lp, {0, 1})));

    Mat<double> sure(1, 2);
    sure.at(0, 0) = 0.0;      // p(a) = 1
    sure.at(0, 1) = -1e9;
    CHECK(ctc_brute_force(sure, {0}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(ctc_brute_force(uniform_log_probs(25, 4), {0}), SizeError);
}

TEST_CASE("greedy decode") {
    const Alphabet ab{"ab"};
    CHECK(ab.num_classes() == 3);
    // per-step argmaxes a a - b  ->  "ab"
    Mat<double> lp(4, 3);
    auto set_best = [&](std::int64_t t, std::int64_t k) {
        for (std::int64_t c = 0; c < 3; ++c) lp.at(t, c) = c == k ? -0.1 : -3.0;
    };
    set_best(0, 0);
    set_best(1, 0);
    set_best(2, 2);
    set_best(3, 1);
    CHECK(greedy_decode(lp, ab) == "ab");

    for (std::int64_t t = 0; t < 4; ++t) set_best(t, 2);
    CHECK(greedy_decode(lp, ab).empty());

    Mat<double> aba(3, 3);
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t c = 0; c < 3; ++c) aba.at(t, c) = -3.0;
    aba.at(0, 0) = aba.at(2, 0) = -0.1;
    aba.at(1, 2) = -0.1;
    CHECK(greedy_decode(aba, ab) == "aa"); // blank separates repeats
}

TEST_CASE("alphabet encode/decode round trip") {
    const Alphabet ab = Alphabet::lipreading();
    CHECK(ab.num_classes() == 28);
    CHECK(ab.blank_index() == 27);
    const auto ids = ab.encode("bin blue");
    CHECK(ab.decode(ids) == "bin blue");
    CHECK_THROWS_AS(ab.encode("Bad!"), ArgumentError);
}
