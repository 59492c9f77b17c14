// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference coverage beyond the standard suite: every backward op on
// at least 5 seeded shapes, odd extents included.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <iostream>

#include "fpa3d/gradcheck_suite.hpp"
#include "fpa3d/kernels.hpp"
#include "fpa3d/rng.hpp"

using namespace fpa3d;

namespace {

const Shape5 kShapes[5] = {
    {1, 1, 2, 3, 3}, {1, 2, 3, 4, 4}, {2, 2, 3, 5, 7}, {1, 3, 5, 6, 5}, {2, 1, 7, 9, 3},
};

Tensor<double> cotangent(const Shape5& s, std::uint64_t seed) {
    return Tensor<double>::uniform(s, -1.0, 1.0, mix64(seed + 999));
}

double weighted(const Tensor<double>& out, const Tensor<double>& cot) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * cot.data[i];
    return acc;
}

Tensor<double> tie_free(const Shape5& s, std::uint64_t seed) {
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    for (auto& v : x.data) {
        if (v >= 0.0 && v < 0.05) v += 0.1;
        if (v < 0.0 && v > -0.05) v -= 0.1;
    }
    return x;
}

} // namespace

TEST_CASE("conv3d backward on 5 seeded shapes") {
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Shape5 s = kShapes[i];
        Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, i + 1);
        Conv3dParams<double> p;
        p.c_in = s.c;
        p.c_out = 2;
        p.kt = p.kh = p.kw = 3;
        p.pad = {1, 1, 1};
        p.stride = {1, i % 2 ? 2 : 1, 1};
        p.weights = Tensor<double>::uniform({2, s.c, 3, 3, 3}, -0.4, 0.4, i + 11).data;
        p.bias = Tensor<double>::uniform({1, 1, 1, 1, 2}, -0.1, 0.1, i + 21).data;
        const auto cot = cotangent(conv3d_out_shape(s, p), i);
        auto loss = [&] { return weighted(conv3d(x, p), cot); };
        auto analytic = [&] {
            auto g = conv3d_backward(x, p, cot);
            return std::vector<std::vector<double>>{g.grad_x.data, g.grad_weights, g.grad_bias};
        };
        const auto report = gradcheck("conv3d", {{"x", x.data.data(), x.data.size()},
                                                 {"w", p.weights.data(), p.weights.size()},
                                                 {"b", p.bias.data(), p.bias.size()}},
                                      loss, analytic, 1e-4);
        INFO("seed ", i, " shape ", s.str(), " err ", report.max_rel_err);
        CHECK(report.pass);
    }
}

TEST_CASE("maxpool3d backward on 5 seeded tie-free shapes") {
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Shape5 s = kShapes[i];
        Tensor<double> x = tie_free(s, i + 31);
        const std::array<std::int64_t, 3> window{1, 2, 2};
        const std::array<std::int64_t, 3> stride{1, i % 2 ? 1 : 2, 2}; // overlap on odd seeds
        if (s.h < 2 || s.w < 2) continue;
        const auto out_shape = maxpool3d(x, window, stride).out.shape;
        const auto cot = cotangent(out_shape, i);
        auto loss = [&] { return weighted(maxpool3d(x, window, stride).out, cot); };
        auto analytic = [&] {
            auto res = maxpool3d(x, window, stride);
            return std::vector<std::vector<double>>{maxpool3d_backward(res.argmax, cot, s).data};
        };
        const auto report = gradcheck("maxpool3d", {{"x", x.data.data(), x.data.size()}}, loss, analytic, 1e-4);
        INFO("seed ", i, " shape ", s.str(), " err ", report.max_rel_err);
        CHECK(report.pass);
    }
}

TEST_CASE("batchnorm3d backward on 5 seeded shapes, both modes") {
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Shape5 s = kShapes[i];
        Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, i + 41);
        auto bn = BatchNormState<double>::identity(s.c);
        const CounterRng rng(i, "bn");
        for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
            bn.gamma[c] = rng.uniform(c, 0.5, 1.5);
            bn.beta[c] = rng.uniform(50 + c, -0.3, 0.3);
            bn.running_var[c] = rng.uniform(100 + c, 0.5, 2.0);
        }
        for (const Mode mode : {Mode::train, Mode::eval}) {
            const auto cot = cotangent(s, i + (mode == Mode::train ? 0 : 1000));
            auto loss = [&] { return weighted(batchnorm3d(x, bn, mode).out, cot); };
            auto analytic = [&] {
                auto res = batchnorm3d(x, bn, mode);
                auto g = batchnorm3d_backward(res.cache, bn.gamma, cot);
                return std::vector<std::vector<double>>{g.grad_x.data, g.grad_gamma, g.grad_beta};
            };
            const auto report = gradcheck("batchnorm3d",
                                          {{"x", x.data.data(), x.data.size()},
                                           {"gamma", bn.gamma.data(), bn.gamma.size()},
                                           {"beta", bn.beta.data(), bn.beta.size()}},
                                          loss, analytic, 1e-4);
            INFO("seed ", i, " shape ", s.str(), " err ", report.max_rel_err);
            CHECK(report.pass);
        }
    }
}

TEST_CASE("activation backwards on 5 seeded shapes") {
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Shape5 s = kShapes[i];
        for (const auto& [kind, tol] : {std::pair<Act, double>{Act::relu, 1e-6},
                                        {Act::sigmoid, 1e-6},
                                        {Act::tanh, 1e-6},
                                        {Act::softmax_over_channels, 1e-5}}) {
            Tensor<double> x =
                kind == Act::relu ? tie_free(s, i + 61) : Tensor<double>::uniform(s, -2.0, 2.0, i + 61);
            const auto cot = cotangent(s, i + 7);
            auto loss = [&] { return weighted(activation(x, kind), cot); };
            auto analytic = [&] {
                const auto y = activation(x, kind);
                return std::vector<std::vector<double>>{activation_backward(kind, x, y, cot).data};
            };
            const auto report = gradcheck("act", {{"x", x.data.data(), x.data.size()}}, loss, analytic, tol);
            INFO("seed ", i, " kind ", static_cast<int>(kind), " err ", report.max_rel_err);
            CHECK(report.pass);
        }
    }
}

TEST_CASE("upsampling backwards on 5 seeded shapes") {
    for (std::uint64_t i = 0; i < 5; ++i) {
        const Shape5 s = kShapes[i];
        Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, i + 71);
        const std::int64_t h_out = s.h * 2 - 1, w_out = s.w + 3;
        Shape5 up = s;
        up.h = h_out;
        up.w = w_out;
        const auto cot = cotangent(up, i);
        auto loss = [&] { return weighted(upsample_bilinear_spatial(x, h_out, w_out), cot); };
        auto analytic = [&] {
            return std::vector<std::vector<double>>{upsample_bilinear_spatial_backward(cot, s).data};
        };
        CHECK(gradcheck("bilinear", {{"x", x.data.data(), x.data.size()}}, loss, analytic, 1e-4).pass);

        Shape5 tu = s;
        tu.t = s.t * 2 - 1;
        const auto cot2 = cotangent(tu, i + 3);
        auto loss2 = [&] { return weighted(upsample_temporal(x, tu.t), cot2); };
        auto analytic2 = [&] {
            return std::vector<std::vector<double>>{upsample_temporal_backward(cot2, s.t).data};
        };
        CHECK(gradcheck("temporal", {{"x", x.data.data(), x.data.size()}}, loss2, analytic2, 1e-4).pass);
    }
}

TEST_CASE("standard suite passes end to end") {
    const auto reports = run_gradcheck_suite(1234);
    CHECK(reports.size() >= 16);
    for (const auto& r : reports) {
        INFO(r.op, " max_rel_err ", r.max_rel_err);
        CHECK(r.pass);
    }
}
