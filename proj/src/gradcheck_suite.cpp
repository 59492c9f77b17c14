// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/gradcheck_suite.hpp"

#include <cmath>

#include "fpa3d/fpa.hpp"
#include "fpa3d/model.hpp"
#include "fpa3d/rng.hpp"

namespace fpa3d {

namespace {

Tensor<double> cotangent(const Shape5& s, std::uint64_t seed) {
    return Tensor<double>::uniform(s, -1.0, 1.0, mix64(seed ^ 0xC07A6E57ull));
}

double weighted_sum(const Tensor<double>& out, const Tensor<double>& cot) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * cot.data[i];
    return acc;
}

// Uniform values kept away from zero so relu/maxpool kinks stay clear of the
// finite-difference step.
Tensor<double> tie_free(const Shape5& s, std::uint64_t seed) {
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    for (auto& v : x.data) {
        if (v >= 0.0 && v < 0.05) v += 0.1;
        if (v < 0.0 && v > -0.05) v -= 0.1;
    }
    return x;
}

ParamRef pref(const std::string& name, std::vector<double>& v) { return {name, v.data(), v.size()}; }
ParamRef pref(const std::string& name, Tensor<double>& t) { return {name, t.data.data(), t.data.size()}; }
ParamRef pref(const std::string& name, Mat<double>& m) { return {name, m.data.data(), m.data.size()}; }

GradReport check_conv_identity(std::uint64_t seed) {
    // 1x1x1 identity kernel is linear; small magnitudes keep the central
    // difference near machine precision.
    const Shape5 s{1, 1, 2, 2, 2};
    Tensor<double> x = Tensor<double>::uniform(s, -0.1, 0.1, seed);
    Conv3dParams<double> p;
    p.c_out = p.c_in = 1;
    p.weights = {1.0};
    p.bias = {0.0};
    Tensor<double> cot = cotangent(s, seed);
    for (auto& v : cot.data) v *= 0.1;
    auto loss = [&] { return weighted_sum(conv3d(x, p), cot); };
    auto analytic = [&] {
        auto g = conv3d_backward(x, p, cot);
        return std::vector<std::vector<double>>{g.grad_x.data, g.grad_weights, g.grad_bias};
    };
    return gradcheck("conv3d_identity", {pref("x", x), pref("w", p.weights), pref("b", p.bias)}, loss,
                     analytic, 1e-10);
}

GradReport check_conv3d(std::uint64_t seed) {
    const Shape5 s{1, 2, 3, 4, 4};
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    Conv3dParams<double> p;
    p.c_out = 2;
    p.c_in = 2;
    p.kt = p.kh = p.kw = 3;
    p.pad = {1, 1, 1};
    p.stride = {1, 2, 1};
    const CounterRng rng(seed, "conv.w");
    p.weights.resize(static_cast<std::size_t>(p.c_out * p.c_in * 27));
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] = rng.uniform(i, -0.4, 0.4);
    p.bias = {0.1, -0.2};
    const Shape5 os = conv3d_out_shape(s, p);
    Tensor<double> cot = cotangent(os, seed);
    auto loss = [&] { return weighted_sum(conv3d(x, p), cot); };
    auto analytic = [&] {
        auto g = conv3d_backward(x, p, cot);
        return std::vector<std::vector<double>>{g.grad_x.data, g.grad_weights, g.grad_bias};
    };
    return gradcheck("conv3d", {pref("x", x), pref("w", p.weights), pref("b", p.bias)}, loss, analytic, 1e-4);
}

GradReport check_maxpool(std::uint64_t seed) {
    const Shape5 s{1, 2, 4, 4, 4};
    Tensor<double> x = tie_free(s, seed);
    const std::array<std::int64_t, 3> window{2, 2, 2}, stride{1, 2, 2}; // overlapping in time
    auto fwd = [&] { return maxpool3d(x, window, stride); };
    Tensor<double> cot = cotangent(fwd().out.shape, seed);
    auto loss = [&] { return weighted_sum(fwd().out, cot); };
    auto analytic = [&] {
        auto res = fwd();
        return std::vector<std::vector<double>>{maxpool3d_backward(res.argmax, cot, s).data};
    };
    return gradcheck("maxpool3d", {pref("x", x)}, loss, analytic, 1e-4);
}

GradReport check_batchnorm(std::uint64_t seed, Mode mode) {
    const Shape5 s{2, 3, 2, 3, 3};
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    BatchNormState<double> bn = BatchNormState<double>::identity(s.c);
    const CounterRng rng(seed, "bn");
    for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
        bn.gamma[c] = rng.uniform(c, 0.5, 1.5);
        bn.beta[c] = rng.uniform(100 + c, -0.3, 0.3);
        bn.running_mean[c] = rng.uniform(200 + c, -0.2, 0.2);
        bn.running_var[c] = rng.uniform(300 + c, 0.5, 1.5);
    }
    Tensor<double> cot = cotangent(s, seed);
    auto loss = [&] { return weighted_sum(batchnorm3d(x, bn, mode).out, cot); };
    auto analytic = [&] {
        auto res = batchnorm3d(x, bn, mode);
        auto g = batchnorm3d_backward(res.cache, bn.gamma, cot);
        return std::vector<std::vector<double>>{g.grad_x.data, g.grad_gamma, g.grad_beta};
    };
    return gradcheck(mode == Mode::train ? "batchnorm3d_train" : "batchnorm3d_eval",
                     {pref("x", x), pref("gamma", bn.gamma), pref("beta", bn.beta)}, loss, analytic, 1e-4);
}

GradReport check_activation(std::uint64_t seed, Act kind, const std::string& name, double tol) {
    const Shape5 s{1, 4, 2, 3, 3};
    Tensor<double> x = kind == Act::relu ? tie_free(s, seed) : Tensor<double>::uniform(s, -2.0, 2.0, seed);
    Tensor<double> cot = cotangent(s, seed);
    auto loss = [&] { return weighted_sum(activation(x, kind), cot); };
    auto analytic = [&] {
        const Tensor<double> y = activation(x, kind);
        return std::vector<std::vector<double>>{activation_backward(kind, x, y, cot).data};
    };
    return gradcheck(name, {pref("x", x)}, loss, analytic, tol);
}

GradReport check_upsample_bilinear(std::uint64_t seed) {
    const Shape5 s{1, 2, 3, 5, 4};
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    Tensor<double> cot = cotangent(Shape5{1, 2, 3, 8, 9}, seed);
    auto loss = [&] { return weighted_sum(upsample_bilinear_spatial(x, 8, 9), cot); };
    auto analytic = [&] {
        return std::vector<std::vector<double>>{upsample_bilinear_spatial_backward(cot, s).data};
    };
    return gradcheck("upsample_bilinear", {pref("x", x)}, loss, analytic, 1e-4);
}

GradReport check_upsample_temporal(std::uint64_t seed) {
    const Shape5 s{1, 2, 3, 4, 4};
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    Tensor<double> cot = cotangent(Shape5{1, 2, 7, 4, 4}, seed);
    auto loss = [&] { return weighted_sum(upsample_temporal(x, 7), cot); };
    auto analytic = [&] {
        return std::vector<std::vector<double>>{upsample_temporal_backward(cot, s.t).data};
    };
    return gradcheck("upsample_temporal", {pref("x", x)}, loss, analytic, 1e-4);
}

GradReport check_dropout(std::uint64_t seed) {
    const Shape5 s{1, 2, 3, 4, 4};
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    Tensor<double> cot = cotangent(s, seed);
    auto loss = [&] { return weighted_sum(dropout3d(x, 0.3, seed, Mode::train).out, cot); };
    auto analytic = [&] {
        auto res = dropout3d(x, 0.3, seed, Mode::train);
        return std::vector<std::vector<double>>{mul(cot, res.mask).data};
    };
    return gradcheck("dropout3d", {pref("x", x)}, loss, analytic, 1e-4);
}

GradReport check_bigru(std::uint64_t seed) {
    const std::int64_t t = 4, d = 3, hidden = 3;
    BiGruParams<double> p = bigru_build<double>(d, hidden, seed, "gc.gru");
    Mat<double> seq(t, d);
    const CounterRng rng(seed, "gru.x");
    for (std::size_t i = 0; i < seq.data.size(); ++i) seq.data[i] = rng.uniform(i, -1.0, 1.0);
    Mat<double> cot(t, 2 * hidden);
    const CounterRng crng(seed, "gru.cot");
    for (std::size_t i = 0; i < cot.data.size(); ++i) cot.data[i] = crng.uniform(i, -1.0, 1.0);

    auto loss = [&] {
        const auto res = bigru_forward(seq, p);
        double acc = 0.0;
        for (std::size_t i = 0; i < res.out.data.size(); ++i) acc += res.out.data[i] * cot.data[i];
        return acc;
    };
    auto analytic = [&] {
        auto res = bigru_forward(seq, p);
        auto g = bigru_backward(p, res.cache, cot);
        std::vector<std::vector<double>> out{g.grad_seq.data};
        for (GruDirParams<double>* dir : {&g.grads.fwd, &g.grads.bwd}) {
            out.push_back(dir->wz.data);
            out.push_back(dir->wr.data);
            out.push_back(dir->wh.data);
            out.push_back(dir->uz.data);
            out.push_back(dir->ur.data);
            out.push_back(dir->uh.data);
            out.push_back(dir->bz);
            out.push_back(dir->br);
            out.push_back(dir->bh);
        }
        return out;
    };
    std::vector<ParamRef> params{pref("x", seq)};
    for (auto [dir, tag] : {std::pair<GruDirParams<double>*, const char*>{&p.fwd, "fwd"}, {&p.bwd, "bwd"}}) {
        const std::string b = std::string(tag) + ".";
        params.push_back(pref(b + "wz", dir->wz));
        params.push_back(pref(b + "wr", dir->wr));
        params.push_back(pref(b + "wh", dir->wh));
        params.push_back(pref(b + "uz", dir->uz));
        params.push_back(pref(b + "ur", dir->ur));
        params.push_back(pref(b + "uh", dir->uh));
        params.push_back(pref(b + "bz", dir->bz));
        params.push_back(pref(b + "br", dir->br));
        params.push_back(pref(b + "bh", dir->bh));
    }
    return gradcheck("bigru", params, loss, analytic, 1e-4);
}

GradReport check_fpa(std::uint64_t seed, FpaVariant variant) {
    FpaConfig cfg;
    cfg.variant = variant;
    const Shape5 s{1, 2, 8, 12, 12};
    FpaModule<double> m = fpa_build<double>(cfg, s.c, seed);
    Tensor<double> x = Tensor<double>::uniform(s, -1.0, 1.0, seed);
    Tensor<double> cot = cotangent(s, seed);
    const std::uint64_t drop_seed = mix64(seed + 77);

    auto loss = [&] { return weighted_sum(fpa_forward(m, x, Mode::train, drop_seed).out, cot); };
    // conv biases are frozen under batch norm, so they are not checked here
    auto analytic = [&] {
        auto fwd = fpa_forward(m, x, Mode::train, drop_seed);
        auto bwd = fpa_backward(m, fwd.cache, cot);
        std::vector<std::vector<double>> out{bwd.grad_x.data};
        for (const auto& lg : bwd.grads.levels) {
            out.push_back(lg.down_w);
            out.push_back(lg.down_gamma);
            out.push_back(lg.down_beta);
            out.push_back(lg.fuse_w);
            out.push_back(lg.fuse_gamma);
            out.push_back(lg.fuse_beta);
        }
        return out;
    };
    std::vector<ParamRef> params{pref("x", x)};
    for (std::size_t i = 0; i < m.levels.size(); ++i) {
        auto& level = m.levels[i];
        const std::string li = std::to_string(i + 1);
        params.push_back(pref("down" + li + ".w", level.down.weights));
        params.push_back(pref("down" + li + ".gamma", level.down_bn.gamma));
        params.push_back(pref("down" + li + ".beta", level.down_bn.beta));
        params.push_back(pref("fuse" + li + ".w", level.fuse.weights));
        params.push_back(pref("fuse" + li + ".gamma", level.fuse_bn.gamma));
        params.push_back(pref("fuse" + li + ".beta", level.fuse_bn.beta));
    }
    return gradcheck(variant == FpaVariant::spatiotemporal_3d ? "fpa3d" : "fpa2d", params, loss, analytic,
                     1e-4);
}

GradReport check_lipnet(std::uint64_t seed) {
    LipNetConfig cfg;
    cfg.t = 6;
    cfg.h = 12;
    cfg.w = 12;
    cfg.channels = {2, 3, 4};
    cfg.kernels = {{{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}};
    cfg.hidden = 4;
    cfg.num_classes = 5;
    cfg.dropout = 0.0;
    // At 12x12 the F1/F2 maps are too small for batch norm at the deepest
    // pyramid level, so the embedded module sits at the input.
    cfg.fpa_positions = {{FpaPosition::input, FpaVariant::spatiotemporal_3d}};
    cfg.fpa.use_dropout = false;
    ModelParams<double> model = init_model<double>(cfg, seed);

    Tensor<double> video = Tensor<double>::uniform(Shape5{1, 1, cfg.t, cfg.h, cfg.w}, 0.0, 1.0, seed);
    Mat<double> cot(cfg.t, cfg.num_classes);
    const CounterRng rng(seed, "lipnet.cot");
    for (std::size_t i = 0; i < cot.data.size(); ++i) cot.data[i] = rng.uniform(i, -1.0, 1.0);

    auto loss = [&] {
        const auto fwd = lipnet_forward(model, video, Mode::train, 0);
        double acc = 0.0;
        for (std::size_t i = 0; i < fwd.log_probs.data.size(); ++i) acc += fwd.log_probs.data[i] * cot.data[i];
        return acc;
    };
    auto views = tensor_views(model);
    auto analytic = [&] {
        auto fwd = lipnet_forward(model, video, Mode::train, 0);
        Mat<double> grad_lp = cot;
        auto grads = lipnet_backward(model, fwd.cache, grad_lp);
        auto gviews = tensor_views(grads);
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < gviews.size(); ++i)
            if (gviews[i].learnable) out.push_back(*gviews[i].flat);
        return out;
    };
    std::vector<ParamRef> params;
    for (auto& view : views)
        if (view.learnable) params.push_back({view.name, view.flat->data(), view.flat->size()});
    return gradcheck("lipnet", params, loss, analytic, 1e-3);
}

} // namespace

std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed, const std::string& filter) {
    std::vector<GradReport> reports;
    auto want = [&](const std::string& name) {
        return filter.empty() || name.find(filter) != std::string::npos;
    };
    if (want("conv3d_identity")) reports.push_back(check_conv_identity(seed));
    if (want("conv3d")) reports.push_back(check_conv3d(seed));
    if (want("maxpool3d")) reports.push_back(check_maxpool(seed));
    if (want("batchnorm3d_train")) reports.push_back(check_batchnorm(seed, Mode::train));
    if (want("batchnorm3d_eval")) reports.push_back(check_batchnorm(seed, Mode::eval));
    if (want("relu")) reports.push_back(check_activation(seed, Act::relu, "relu", 1e-6));
    if (want("sigmoid")) reports.push_back(check_activation(seed, Act::sigmoid, "sigmoid", 1e-6));
    if (want("tanh")) reports.push_back(check_activation(seed, Act::tanh, "tanh", 1e-6));
    if (want("softmax")) reports.push_back(check_activation(seed, Act::softmax_over_channels, "softmax", 1e-5));
    if (want("upsample_bilinear")) reports.push_back(check_upsample_bilinear(seed));
    if (want("upsample_temporal")) reports.push_back(check_upsample_temporal(seed));
    if (want("dropout3d")) reports.push_back(check_dropout(seed));
    if (want("bigru")) reports.push_back(check_bigru(seed));
    if (want("fpa2d")) reports.push_back(check_fpa(seed, FpaVariant::spatial_2d));
    if (want("fpa3d")) reports.push_back(check_fpa(seed, FpaVariant::spatiotemporal_3d));
    if (want("lipnet")) reports.push_back(check_lipnet(seed));
    return reports;
}

} // namespace fpa3d
