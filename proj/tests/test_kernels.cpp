// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fpa3d/kernels.hpp"
#include "test_util.hpp"

using namespace fpa3d;
using fpa3d::testutil::bitwise_equal;

namespace {

// Brute-force cross-correlation oracle: loops over every output element and
// every tap with no early exits or reordering tricks.
template <typename T>
Tensor<T> conv3d_oracle(const Tensor<T>& x, const Conv3dParams<T>& p) {
    const Shape5 os = conv3d_out_shape(x.shape, p);
    Tensor<T> out(os);
    for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t co = 0; co < os.c; ++co)
            for (std::int64_t to = 0; to < os.t; ++to)
                for (std::int64_t ho = 0; ho < os.h; ++ho)
                    for (std::int64_t wo = 0; wo < os.w; ++wo) {
                        double acc = p.bias[static_cast<std::size_t>(co)];
                        for (std::int64_t ci = 0; ci < p.c_in; ++ci)
                            for (std::int64_t kt = 0; kt < p.kt; ++kt)
                                for (std::int64_t kh = 0; kh < p.kh; ++kh)
                                    for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                                        const std::int64_t ti = to * p.stride[0] - p.pad[0] + kt;
                                        const std::int64_t hi = ho * p.stride[1] - p.pad[1] + kh;
                                        const std::int64_t wi = wo * p.stride[2] - p.pad[2] + kw;
                                        if (ti < 0 || ti >= x.shape.t || hi < 0 || hi >= x.shape.h ||
                                            wi < 0 || wi >= x.shape.w)
                                            continue;
                                        acc += static_cast<double>(x.at(n, ci, ti, hi, wi)) *
                                               static_cast<double>(p.weights[p.widx(co, ci, kt, kh, kw)]);
                                    }
                        out.at(n, co, to, ho, wo) = static_cast<T>(acc);
                    }
    return out;
}

Conv3dParams<double> seeded_conv(std::int64_t c_out, std::int64_t c_in, std::int64_t kt, std::int64_t kh,
                                 std::int64_t kw, std::uint64_t seed) {
    Conv3dParams<double> p;
    p.c_out = c_out;
    p.c_in = c_in;
    p.kt = kt;
    p.kh = kh;
    p.kw = kw;
    p.weights = Tensor<double>::uniform({c_out, c_in, kt, kh, kw}, -0.5, 0.5, seed).data;
    p.bias = Tensor<double>::uniform({1, 1, 1, 1, c_out}, -0.1, 0.1, seed + 1).data;
    return p;
}

} // namespace

TEST_CASE("conv3d identity and zero kernels") {
    const auto x = Tensor<double>::uniform({1, 1, 2, 3, 3}, -1.0, 1.0, 5);
    Conv3dParams<double> id;
    id.weights = {1.0};
    id.bias = {0.0};
    CHECK(bitwise_equal(conv3d(x, id), x));

    auto zero = seeded_conv(2, 1, 1, 1, 1, 3);
    for (auto& w : zero.weights) w = 0.0;
    zero.bias = {0.25, -1.5};
    const auto out = conv3d(x, zero);
    for (std::int64_t t = 0; t < out.shape.t; ++t)
        for (std::int64_t h = 0; h < out.shape.h; ++h)
            for (std::int64_t w = 0; w < out.shape.w; ++w) {
                CHECK(out.at(0, 0, t, h, w) == 0.25);
                CHECK(out.at(0, 1, t, h, w) == -1.5);
            }
}

TEST_CASE("conv3d all-ones 2x2x2 kernel sums the cube") {
    Tensor<double> x({1, 1, 2, 2, 2});
    std::iota(x.data.begin(), x.data.end(), 1.0); // 1..8
    Conv3dParams<double> p;
    p.kt = p.kh = p.kw = 2;
    p.weights.assign(8, 1.0);
    p.bias = {0.0};
    const auto out = conv3d(x, p);
    CHECK(out.shape == Shape5{1, 1, 1, 1, 1});
    CHECK(out.data[0] == doctest::Approx(36.0)); // 1+2+...+8
    CHECK(bitwise_equal(out, conv3d_oracle(x, p)));
}

TEST_CASE("conv3d matches the brute-force oracle on random cases") {
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        const auto x = Tensor<double>::uniform({2, 3, 4, 5, 6}, -1.0, 1.0, seed);
        auto p = seeded_conv(2, 3, 3, 3, 3, seed * 10);
        p.stride = {seed % 2 ? 1 : 2, 2, 1};
        p.pad = {1, 1, 1};
        const auto got = conv3d(x, p);
        const auto want = conv3d_oracle(x, p);
        CHECK(fpa3d::testutil::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv3d stride-2 kernel-3 pad-1 halves extents with ceil") {
    for (std::int64_t d = 1; d <= 64; ++d) {
        Conv3dParams<double> p = seeded_conv(1, 1, 3, 3, 3, 77);
        p.stride = {2, 2, 2};
        p.pad = {1, 1, 1};
        const Shape5 os = conv3d_out_shape({1, 1, d, d, d}, p);
        CHECK(os.t == (d + 1) / 2);
        CHECK(os.h == (d + 1) / 2);
        CHECK(os.w == (d + 1) / 2);
    }
}

TEST_CASE("conv3d shape errors") {
    const auto x = Tensor<double>::zeros({1, 2, 2, 2, 2});
    auto p = seeded_conv(1, 3, 1, 1, 1, 1);
    CHECK_THROWS_AS(conv3d(x, p), ShapeError); // channel mismatch
    auto big = seeded_conv(1, 2, 3, 3, 3, 1);
    CHECK_THROWS_AS(conv3d(x, big), ShapeError); // empty output, no padding
}

TEST_CASE("conv3d_backward trivial cases") {
    const auto x = Tensor<double>::uniform({1, 1, 2, 3, 3}, -1.0, 1.0, 5);
    Conv3dParams<double> id;
    id.weights = {1.0};
    id.bias = {0.0};
    const auto zeros = Tensor<double>::zeros(x.shape);
    const auto gz = conv3d_backward(x, id, zeros);
    CHECK(bitwise_equal(gz.grad_x, zeros));
    CHECK(gz.grad_weights[0] == 0.0);
    CHECK(gz.grad_bias[0] == 0.0);

    const auto g = Tensor<double>::uniform(x.shape, -1.0, 1.0, 6);
    const auto gi = conv3d_backward(x, id, g);
    CHECK(bitwise_equal(gi.grad_x, g)); // identity kernel passes grads through
    CHECK_THROWS_AS(conv3d_backward(x, id, Tensor<double>::zeros({1, 1, 2, 3, 4})), ShapeError);
}

TEST_CASE("maxpool3d examples") {
    Tensor<double> x({1, 1, 1, 2, 2});
    x.data = {1, 5, 3, 2};
    const auto full = maxpool3d(x, {1, 2, 2}, {1, 1, 1});
    CHECK(full.out.shape == Shape5{1, 1, 1, 1, 1});
    CHECK(full.out.data[0] == 5.0);

    const auto c = Tensor<double>::constant({1, 1, 2, 4, 4}, 2.5);
    const auto pc = maxpool3d(c, {1, 2, 2}, {1, 2, 2});
    for (double v : pc.out.data) CHECK(v == 2.5);
    // tie rule: first element of each window in (t, h, w) scan order
    CHECK(pc.argmax[0] == static_cast<std::int64_t>(c.index(0, 0, 0, 0, 0)));
    CHECK(pc.argmax[1] == static_cast<std::int64_t>(c.index(0, 0, 0, 0, 2)));

    // two frames, each a 4x4 ramp 0..15; spatial 2x2 window stride 2
    Tensor<double> ramp({1, 1, 2, 4, 4});
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t i = 0; i < 16; ++i) ramp.data[static_cast<std::size_t>(t * 16 + i)] = static_cast<double>(i);
    const auto pr = maxpool3d(ramp, {1, 2, 2}, {1, 2, 2});
    for (std::int64_t t = 0; t < 2; ++t) {
        CHECK(pr.out.at(0, 0, t, 0, 0) == 5.0);
        CHECK(pr.out.at(0, 0, t, 0, 1) == 7.0);
        CHECK(pr.out.at(0, 0, t, 1, 0) == 13.0);
        CHECK(pr.out.at(0, 0, t, 1, 1) == 15.0);
    }
    CHECK_THROWS_AS(maxpool3d(x, {1, 3, 3}, {1, 1, 1}), ShapeError);
}

TEST_CASE("maxpool3d_backward routes to argmax positions") {
    const auto x = Tensor<double>::uniform({1, 2, 2, 4, 4}, -1.0, 1.0, 9);
    const auto pooled = maxpool3d(x, {1, 2, 2}, {1, 2, 2});
    const auto zeros = Tensor<double>::zeros(pooled.out.shape);
    CHECK(bitwise_equal(maxpool3d_backward(pooled.argmax, zeros, x.shape), Tensor<double>::zeros(x.shape)));

    // non-overlapping windows: every grad value lands exactly once
    const auto g = Tensor<double>::uniform(pooled.out.shape, 1.0, 2.0, 10);
    const auto gx = maxpool3d_backward(pooled.argmax, g, x.shape);
    double sum_g = 0.0, sum_gx = 0.0;
    for (double v : g.data) sum_g += v;
    std::int64_t nonzero = 0;
    for (double v : gx.data) {
        sum_gx += v;
        nonzero += v != 0.0 ? 1 : 0;
    }
    CHECK(sum_g == doctest::Approx(sum_gx));
    CHECK(nonzero == static_cast<std::int64_t>(g.data.size()));

    auto bad = pooled.argmax;
    bad[0] = x.numel() + 5;
    CHECK_THROWS_AS(maxpool3d_backward(bad, g, x.shape), CorruptionError);
}

TEST_CASE("bilinear upsample examples") {
    const auto x = Tensor<double>::uniform({1, 2, 2, 3, 4}, -1.0, 1.0, 3);
    CHECK(bitwise_equal(upsample_bilinear_spatial(x, 3, 4), x));

    Tensor<double> row({1, 1, 1, 1, 2});
    row.data = {0.0, 2.0};
    const auto up = upsample_bilinear_spatial(row, 1, 3);
    CHECK(up.data[0] == doctest::Approx(0.0));
    CHECK(up.data[1] == doctest::Approx(1.0));
    CHECK(up.data[2] == doctest::Approx(2.0));

    Tensor<double> sq({1, 1, 1, 2, 2});
    sq.data = {0.0, 2.0, 4.0, 6.0};
    const auto up3 = upsample_bilinear_spatial(sq, 3, 3);
    // align-corners closed form at the center: (0+2+4+6)/4
    CHECK(up3.at(0, 0, 0, 1, 1) == doctest::Approx(3.0));
    CHECK(up3.at(0, 0, 0, 0, 0) == doctest::Approx(0.0));
    CHECK(up3.at(0, 0, 0, 2, 2) == doctest::Approx(6.0));
}

TEST_CASE("bilinear upsample preserves constants and stays in range") {
    const auto c = Tensor<double>::constant({1, 1, 2, 3, 3}, 0.731);
    const auto up = upsample_bilinear_spatial(c, 7, 5);
    for (double v : up.data) CHECK(v == 0.731);

    for (std::uint64_t seed : {4, 5, 6}) {
        const auto x = Tensor<double>::uniform({1, 2, 2, 4, 5}, -1.0, 1.0, seed);
        double lo = 1e9, hi = -1e9;
        for (double v : x.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const auto up2 = upsample_bilinear_spatial(x, 9, 11);
        for (double v : up2.data) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("temporal upsample follows the pad-then-duplicate rule") {
    Tensor<double> x({1, 1, 2, 1, 1});
    x.data = {10.0, 20.0}; // frames A, B

    const auto four = upsample_temporal(x, 4);
    CHECK(four.data == std::vector<double>{10, 10, 20, 20});

    const auto five = upsample_temporal(x, 5);
    CHECK(five.data == std::vector<double>{10, 10, 20, 20, 20});

    CHECK(bitwise_equal(upsample_temporal(x, 2), x));
    CHECK_THROWS_AS(upsample_temporal(x, 1), ShapeError);
}

TEST_CASE("batchnorm3d normalizes per channel in train mode") {
    const auto x = Tensor<double>::uniform({2, 3, 4, 5, 5}, -3.0, 5.0, 21);
    const auto bn = BatchNormState<double>::identity(3);
    const auto res = batchnorm3d(x, bn, Mode::train);
    const std::int64_t m = x.shape.n * x.shape.t * x.shape.h * x.shape.w;
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t t = 0; t < 4; ++t)
                for (std::int64_t h = 0; h < 5; ++h)
                    for (std::int64_t w = 0; w < 5; ++w) mean += res.out.at(n, c, t, h, w);
        mean /= static_cast<double>(m);
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t t = 0; t < 4; ++t)
                for (std::int64_t h = 0; h < 5; ++h)
                    for (std::int64_t w = 0; w < 5; ++w) {
                        const double d = res.out.at(n, c, t, h, w) - mean;
                        var += d * d;
                    }
        var /= static_cast<double>(m);
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("batchnorm3d gamma=0 gives beta, eval uses running stats") {
    const auto x = Tensor<double>::uniform({1, 2, 2, 3, 3}, -1.0, 1.0, 8);
    auto bn = BatchNormState<double>::identity(2);
    bn.gamma = {0.0, 0.0};
    bn.beta = {0.7, -0.3};
    const auto res = batchnorm3d(x, bn, Mode::train);
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t h = 0; h < 3; ++h)
            for (std::int64_t w = 0; w < 3; ++w) {
                CHECK(res.out.at(0, 0, t, h, w) == 0.7);
                CHECK(res.out.at(0, 1, t, h, w) == -0.3);
            }

    // eval with running_mean=2, running_var=4 on constant 4: (4-2)/sqrt(4) = 1
    auto bn2 = BatchNormState<double>::identity(1);
    bn2.running_mean = {2.0};
    bn2.running_var = {4.0};
    bn2.epsilon = 1e-15;
    const auto c4 = Tensor<double>::constant({1, 1, 2, 2, 2}, 4.0);
    const auto ev = batchnorm3d(c4, bn2, Mode::eval);
    for (double v : ev.out.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("batchnorm3d running-stat update and degenerate batch") {
    const auto x = Tensor<double>::uniform({1, 1, 2, 2, 2}, 0.0, 1.0, 13);
    auto bn = BatchNormState<double>::identity(1);
    const auto res = batchnorm3d(x, bn, Mode::train);
    const double rm0 = bn.running_mean[0], rv0 = bn.running_var[0];
    batchnorm_update_running(bn, res.cache);
    CHECK(bn.running_mean[0] == doctest::Approx(0.9 * rm0 + 0.1 * res.cache.batch_mean[0]));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * rv0 + 0.1 * res.cache.batch_var[0]));

    const auto single = Tensor<double>::constant({1, 1, 1, 1, 1}, 1.0);
    CHECK_THROWS_AS(batchnorm3d(single, bn, Mode::train), NumericError);
    CHECK_NOTHROW(batchnorm3d(single, bn, Mode::eval));
}

TEST_CASE("dropout3d") {
    const auto x = Tensor<double>::uniform({1, 1, 2, 4, 4}, -1.0, 1.0, 31);
    CHECK(bitwise_equal(dropout3d(x, 0.0, 1, Mode::train).out, x));
    CHECK(bitwise_equal(dropout3d(x, 0.9, 1, Mode::eval).out, x));

    const auto ones = Tensor<double>::constant({1, 1, 10, 100, 100}, 1.0);
    const auto dropped = dropout3d(ones, 0.5, 7, Mode::train);
    double mean = 0.0;
    for (double v : dropped.out.data) mean += v;
    mean /= static_cast<double>(dropped.out.data.size());
    CHECK(std::abs(mean - 1.0) < 0.02); // inverted dropout preserves expectation

    // mask is reproducible and thread-schedule independent
    const auto again = dropout3d(ones, 0.5, 7, Mode::train);
    CHECK(bitwise_equal(dropped.mask, again.mask));
    CHECK_THROWS_AS(dropout3d(x, 1.0, 1, Mode::train), ArgumentError);
}

TEST_CASE("activations") {
    Tensor<double> x({1, 2, 1, 1, 1});
    x.data = {-1.0, 2.0};
    CHECK(activation(x, Act::relu).data == std::vector<double>{0.0, 2.0});

    const auto zero = Tensor<double>::zeros({1, 1, 1, 1, 1});
    CHECK(activation(zero, Act::sigmoid).data[0] == 0.5);
    CHECK(activation(zero, Act::tanh).data[0] == 0.0);

    Tensor<double> logits({1, 2, 1, 1, 1});
    logits.data = {1.3, 1.3};
    const auto sm = activation(logits, Act::softmax_over_channels);
    CHECK(sm.data[0] == doctest::Approx(0.5));
    CHECK(sm.data[1] == doctest::Approx(0.5));

    // softmax rows sum to one for random logits
    const auto r = Tensor<double>::uniform({2, 5, 2, 3, 3}, -4.0, 4.0, 17);
    const auto smr = activation(r, Act::softmax_over_channels);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t t = 0; t < 2; ++t)
            for (std::int64_t h = 0; h < 3; ++h)
                for (std::int64_t w = 0; w < 3; ++w) {
                    double sum = 0.0;
                    for (std::int64_t c = 0; c < 5; ++c) sum += smr.at(n, c, t, h, w);
                    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
                }
}
