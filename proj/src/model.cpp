// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "fpa3d/ctc.hpp"
#include "fpa3d/rng.hpp"

namespace fpa3d {

std::string fpa_position_name(FpaPosition p) {
    switch (p) {
        case FpaPosition::input: return "input";
        case FpaPosition::f1: return "f1";
        case FpaPosition::f2: return "f2";
    }
    return "?";
}

void LipNetConfig::validate() const {
    if (in_c < 1 || t < 1 || h < 1 || w < 1) throw ShapeError("lipnet: input extents must be >= 1");
    if (num_classes < 2) throw ArgumentError("lipnet: need at least 2 classes");
    if (hidden < 1) throw ArgumentError("lipnet: hidden size must be >= 1");
    for (const auto& k : kernels)
        if (k[0] % 2 == 0 || k[1] % 2 == 0 || k[2] % 2 == 0)
            throw ArgumentError("lipnet: block kernels must be odd so padding preserves extents");
    if (dropout < 0.0 || dropout >= 1.0) throw ArgumentError("lipnet: dropout must be in [0, 1)");
}

namespace {

template <typename T>
Conv3dParams<T> block_conv(const LipNetConfig& cfg, int i) {
    Conv3dParams<T> p;
    p.c_in = i == 0 ? cfg.in_c : cfg.channels[static_cast<std::size_t>(i - 1)];
    p.c_out = cfg.channels[static_cast<std::size_t>(i)];
    const auto& k = cfg.kernels[static_cast<std::size_t>(i)];
    p.kt = k[0];
    p.kh = k[1];
    p.kw = k[2];
    p.pad = {k[0] / 2, k[1] / 2, k[2] / 2};
    p.stride = i == 0 ? std::array<std::int64_t, 3>{1, 2, 2} : std::array<std::int64_t, 3>{1, 1, 1};
    p.weights.assign(static_cast<std::size_t>(p.c_out * p.c_in * p.kt * p.kh * p.kw), T(0));
    p.bias.assign(static_cast<std::size_t>(p.c_out), T(0));
    return p;
}

template <typename T>
void fill_uniform(std::vector<T>& buf, double bound, std::uint64_t seed, const std::string& stream) {
    const CounterRng rng(seed, stream);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<T>(rng.uniform(i, -bound, bound));
}

// Spatial geometry after the three blocks (t is preserved throughout).
struct SpatialPlan {
    std::int64_t h3 = 0, w3 = 0;
};

SpatialPlan plan_spatial(const LipNetConfig& cfg) {
    auto ceil_div = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
    std::int64_t h = cfg.h, w = cfg.w;
    for (int i = 0; i < 3; ++i) {
        if (i == 0) {
            h = ceil_div(h, 2);
            w = ceil_div(w, 2);
        }
        // pool (1, 2, 2), window clamped on degenerate axes
        h = h >= 2 ? (h - 2) / 2 + 1 : h;
        w = w >= 2 ? (w - 2) / 2 + 1 : w;
    }
    return {h, w};
}

} // namespace

template <typename T>
ModelParams<T> init_model(const LipNetConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams<T> p;
    p.config = config;
    for (int i = 0; i < 3; ++i) {
        auto& b = p.blocks[static_cast<std::size_t>(i)];
        b.conv = block_conv<T>(config, i);
        const double bound = std::sqrt(1.0 / static_cast<double>(b.conv.c_in * b.conv.kt * b.conv.kh * b.conv.kw));
        fill_uniform(b.conv.weights, bound, seed, "block" + std::to_string(i + 1) + ".conv.w");
        b.bn = BatchNormState<T>::identity(b.conv.c_out);
    }
    const SpatialPlan sp = plan_spatial(config);
    const std::int64_t feat = config.channels[2] * sp.h3 * sp.w3;
    p.gru1 = bigru_build<T>(feat, config.hidden, seed, "gru1");
    p.gru2 = bigru_build<T>(2 * config.hidden, config.hidden, seed, "gru2");
    p.out_w = Mat<T>(config.num_classes, 2 * config.hidden);
    {
        const CounterRng rng(seed, "out.w");
        const double bound = std::sqrt(1.0 / static_cast<double>(2 * config.hidden));
        for (std::size_t i = 0; i < p.out_w.data.size(); ++i)
            p.out_w.data[i] = static_cast<T>(rng.uniform(i, -bound, bound));
    }
    p.out_b.assign(static_cast<std::size_t>(config.num_classes), T(0));

    for (const auto& [pos, variant] : config.fpa_positions) {
        FpaConfig fc = config.fpa;
        fc.variant = variant;
        const std::int64_t c = pos == FpaPosition::input ? config.in_c
                               : pos == FpaPosition::f1  ? config.channels[0]
                                                         : config.channels[1];
        auto module = fpa_build<T>(fc, c, stream_key(seed, "fpa." + fpa_position_name(pos)));
        if (pos == FpaPosition::input)
            p.fpa_input = std::move(module);
        else if (pos == FpaPosition::f1)
            p.fpa_f1 = std::move(module);
        else
            p.fpa_f2 = std::move(module);
    }
    return p;
}

template <typename T>
ModelParams<T> grads_like(const ModelParams<T>& p) {
    ModelParams<T> g = p;
    for (auto view : tensor_views(g)) std::fill(view.flat->begin(), view.flat->end(), T(0));
    return g;
}

namespace {

// A conv bias directly followed by batch norm is redundant (the mean
// subtraction removes it), so it stays frozen at zero rather than drifting on
// noise-scale gradients.
template <typename T>
void conv_views(std::vector<TensorView<T>>& out, const std::string& prefix, Conv3dParams<T>& c,
                bool followed_by_bn) {
    out.push_back({prefix + ".w", &c.weights,
                   {static_cast<std::uint32_t>(c.c_out), static_cast<std::uint32_t>(c.c_in),
                    static_cast<std::uint32_t>(c.kt), static_cast<std::uint32_t>(c.kh),
                    static_cast<std::uint32_t>(c.kw)},
                   true});
    out.push_back({prefix + ".b", &c.bias, {static_cast<std::uint32_t>(c.c_out)}, !followed_by_bn});
}

template <typename T>
void bn_views(std::vector<TensorView<T>>& out, const std::string& prefix, BatchNormState<T>& bn) {
    const auto c = static_cast<std::uint32_t>(bn.gamma.size());
    out.push_back({prefix + ".gamma", &bn.gamma, {c}, true});
    out.push_back({prefix + ".beta", &bn.beta, {c}, true});
    out.push_back({prefix + ".running_mean", &bn.running_mean, {c}, false});
    out.push_back({prefix + ".running_var", &bn.running_var, {c}, false});
}

template <typename T>
void mat_views(std::vector<TensorView<T>>& out, const std::string& name, Mat<T>& m) {
    out.push_back({name, &m.data, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, true});
}

template <typename T>
void gru_views(std::vector<TensorView<T>>& out, const std::string& prefix, BiGruParams<T>& g) {
    for (const char* dir : {"fwd", "bwd"}) {
        GruDirParams<T>& d = dir[0] == 'f' ? g.fwd : g.bwd;
        const std::string base = prefix + "." + dir + ".";
        mat_views(out, base + "wz", d.wz);
        mat_views(out, base + "wr", d.wr);
        mat_views(out, base + "wh", d.wh);
        mat_views(out, base + "uz", d.uz);
        mat_views(out, base + "ur", d.ur);
        mat_views(out, base + "uh", d.uh);
        out.push_back({base + "bz", &d.bz, {static_cast<std::uint32_t>(d.bz.size())}, true});
        out.push_back({base + "br", &d.br, {static_cast<std::uint32_t>(d.br.size())}, true});
        out.push_back({base + "bh", &d.bh, {static_cast<std::uint32_t>(d.bh.size())}, true});
    }
}

template <typename T>
void fpa_views(std::vector<TensorView<T>>& out, const std::string& prefix, FpaModule<T>& m) {
    for (std::size_t i = 0; i < m.levels.size(); ++i) {
        auto& level = m.levels[i];
        const std::string li = std::to_string(i + 1);
        conv_views(out, prefix + ".down" + li + ".conv", level.down, m.config.use_batchnorm);
        if (m.config.use_batchnorm) bn_views(out, prefix + ".down" + li + ".bn", level.down_bn);
        conv_views(out, prefix + ".fuse" + li + ".conv", level.fuse, m.config.use_batchnorm);
        if (m.config.use_batchnorm) bn_views(out, prefix + ".fuse" + li + ".bn", level.fuse_bn);
    }
}

} // namespace

template <typename T>
std::vector<TensorView<T>> tensor_views(ModelParams<T>& p) {
    std::vector<TensorView<T>> out;
    for (int i = 0; i < 3; ++i) {
        auto& b = p.blocks[static_cast<std::size_t>(i)];
        const std::string prefix = "block" + std::to_string(i + 1);
        conv_views(out, prefix + ".conv", b.conv, true);
        bn_views(out, prefix + ".bn", b.bn);
    }
    gru_views(out, "gru1", p.gru1);
    gru_views(out, "gru2", p.gru2);
    mat_views(out, "out.w", p.out_w);
    out.push_back({"out.b", &p.out_b, {static_cast<std::uint32_t>(p.out_b.size())}, true});
    if (p.fpa_input) fpa_views(out, "fpa.input", *p.fpa_input);
    if (p.fpa_f1) fpa_views(out, "fpa.f1", *p.fpa_f1);
    if (p.fpa_f2) fpa_views(out, "fpa.f2", *p.fpa_f2);
    return out;
}

template <typename T>
BlockResult<T> stcnn_block_forward(const Tensor<T>& x, const StcnnBlock<T>& block, double dropout_rate,
                                   Mode mode, std::uint64_t dropout_seed) {
    BlockResult<T> res;
    res.cache.in = x;
    Tensor<T> cur = conv3d(x, block.conv);
    {
        auto bn = batchnorm3d(cur, block.bn, mode);
        res.cache.bn = std::move(bn.cache);
        cur = std::move(bn.out);
    }
    res.cache.relu_out = activation(cur, Act::relu);
    {
        auto d = dropout3d(res.cache.relu_out, dropout_rate, dropout_seed, mode);
        res.cache.drop_mask = std::move(d.mask);
        cur = std::move(d.out);
    }
    res.cache.prepool_shape = cur.shape;
    // Spatial pool (1, 2, 2); degenerate axes pass through unpooled.
    res.cache.pool_window = {1, std::min<std::int64_t>(2, cur.shape.h), std::min<std::int64_t>(2, cur.shape.w)};
    auto pooled = maxpool3d(cur, res.cache.pool_window, res.cache.pool_window);
    res.cache.pool_argmax = std::move(pooled.argmax);
    res.out = std::move(pooled.out);
    return res;
}

template <typename T>
BlockGrads<T> stcnn_block_backward(const StcnnBlock<T>& block, const BlockCache<T>& cache,
                                   const Tensor<T>& grad_out) {
    BlockGrads<T> res;
    Tensor<T> g = maxpool3d_backward(cache.pool_argmax, grad_out, cache.prepool_shape);
    g = mul(g, cache.drop_mask);
    g = activation_backward(Act::relu, cache.relu_out, cache.relu_out, g);
    {
        auto bg = batchnorm3d_backward(cache.bn, block.bn.gamma, g);
        res.grad_gamma = std::move(bg.grad_gamma);
        res.grad_beta = std::move(bg.grad_beta);
        g = std::move(bg.grad_x);
    }
    res.conv = conv3d_backward(cache.in, block.conv, g);
    res.grad_in = std::move(res.conv.grad_x);
    return res;
}

namespace {

std::uint64_t site(std::uint64_t key, int ordinal) { return mix64(key + (static_cast<std::uint64_t>(ordinal) + 1) * kGolden); }

template <typename T>
Mat<T> flatten_per_timestep(const Tensor<T>& x) {
    // (1, c, t, h, w) -> t rows of flattened (c, h, w)
    const Shape5& s = x.shape;
    Mat<T> m(s.t, s.c * s.h * s.w);
    for (std::int64_t t = 0; t < s.t; ++t)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w)
                    m.at(t, (c * s.h + h) * s.w + w) = x.at(0, c, t, h, w);
    return m;
}

template <typename T>
Tensor<T> unflatten_per_timestep(const Mat<T>& m, const Shape5& s) {
    Tensor<T> x(s);
    for (std::int64_t t = 0; t < s.t; ++t)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w)
                    x.at(0, c, t, h, w) = m.at(t, (c * s.h + h) * s.w + w);
    return x;
}

// Copies pyramid gradients into a module-shaped gradient container.
template <typename T>
void store_fpa_grads(FpaModule<T>& into, const FpaGrads<T>& g) {
    for (std::size_t i = 0; i < into.levels.size(); ++i) {
        into.levels[i].down.weights = g.levels[i].down_w;
        into.levels[i].down.bias = g.levels[i].down_b;
        into.levels[i].fuse.weights = g.levels[i].fuse_w;
        into.levels[i].fuse.bias = g.levels[i].fuse_b;
        if (into.config.use_batchnorm) {
            into.levels[i].down_bn.gamma = g.levels[i].down_gamma;
            into.levels[i].down_bn.beta = g.levels[i].down_beta;
            into.levels[i].fuse_bn.gamma = g.levels[i].fuse_gamma;
            into.levels[i].fuse_bn.beta = g.levels[i].fuse_beta;
        }
    }
}

} // namespace

template <typename T>
LipnetForward<T> lipnet_forward(const ModelParams<T>& params, const Tensor<T>& video, Mode mode,
                                std::uint64_t dropout_seed) {
    const LipNetConfig& cfg = params.config;
    if (video.shape.n != 1 || video.shape.c != cfg.in_c)
        throw ShapeError("lipnet_forward: expected single video with " + std::to_string(cfg.in_c) +
                         " channels, got " + video.shape.str());

    LipnetForward<T> res;
    Tensor<T> cur = video;

    if (params.fpa_input) {
        auto f = fpa_forward(*params.fpa_input, cur, mode, site(dropout_seed, 10));
        res.cache.fpa_input = std::move(f.cache);
        cur = std::move(f.out);
    }
    for (int i = 0; i < 3; ++i) {
        auto b = stcnn_block_forward(cur, params.blocks[static_cast<std::size_t>(i)], cfg.dropout, mode,
                                     site(dropout_seed, i));
        res.cache.blocks[static_cast<std::size_t>(i)] = std::move(b.cache);
        cur = std::move(b.out);
        if (i == 0 && params.fpa_f1) {
            auto f = fpa_forward(*params.fpa_f1, cur, mode, site(dropout_seed, 11));
            res.cache.fpa_f1 = std::move(f.cache);
            cur = std::move(f.out);
        }
        if (i == 1 && params.fpa_f2) {
            auto f = fpa_forward(*params.fpa_f2, cur, mode, site(dropout_seed, 12));
            res.cache.fpa_f2 = std::move(f.cache);
            cur = std::move(f.out);
        }
    }
    res.cache.block3_shape = cur.shape;

    Mat<T> feats = flatten_per_timestep(cur);
    auto g1 = bigru_forward(feats, params.gru1);
    res.cache.gru1 = std::move(g1.cache);
    auto g2 = bigru_forward(g1.out, params.gru2);
    res.cache.gru2 = std::move(g2.cache);
    res.cache.gru2_out = g2.out;

    // Per-timestep linear + log-softmax.
    const std::int64_t t_len = g2.out.rows;
    Mat<T> log_probs(t_len, cfg.num_classes);
    for (std::int64_t t = 0; t < t_len; ++t) {
        std::vector<T> logits(static_cast<std::size_t>(cfg.num_classes));
        matvec(params.out_w, g2.out.row(t), logits.data());
        for (std::int64_t k = 0; k < cfg.num_classes; ++k) logits[static_cast<std::size_t>(k)] += params.out_b[static_cast<std::size_t>(k)];
        T mx = logits[0];
        for (const T v : logits) mx = std::max(mx, v);
        T sum = T(0);
        for (const T v : logits) sum += std::exp(v - mx);
        const T lse = mx + std::log(sum);
        for (std::int64_t k = 0; k < cfg.num_classes; ++k)
            log_probs.at(t, k) = logits[static_cast<std::size_t>(k)] - lse;
    }
    res.cache.log_probs = log_probs;
    res.cache.valid = true;
    res.log_probs = std::move(log_probs);
    return res;
}

template <typename T>
ModelParams<T> lipnet_backward(const ModelParams<T>& params, const LipnetCache<T>& cache,
                               const Mat<T>& grad_log_probs) {
    if (!cache.valid) throw CorruptionError("lipnet_backward: stale cache");
    const LipNetConfig& cfg = params.config;
    ModelParams<T> grads = grads_like(params);

    // log-softmax backward: g_logits = g - softmax * sum(g)
    const std::int64_t t_len = grad_log_probs.rows;
    Mat<T> grad_gru2_out(t_len, 2 * cfg.hidden);
    for (std::int64_t t = 0; t < t_len; ++t) {
        T gsum = T(0);
        for (std::int64_t k = 0; k < cfg.num_classes; ++k) gsum += grad_log_probs.at(t, k);
        std::vector<T> glogits(static_cast<std::size_t>(cfg.num_classes));
        for (std::int64_t k = 0; k < cfg.num_classes; ++k)
            glogits[static_cast<std::size_t>(k)] =
                grad_log_probs.at(t, k) - std::exp(cache.log_probs.at(t, k)) * gsum;
        // linear backward
        outer_acc(grads.out_w, glogits.data(), cache.gru2_out.row(t));
        for (std::int64_t k = 0; k < cfg.num_classes; ++k)
            grads.out_b[static_cast<std::size_t>(k)] += glogits[static_cast<std::size_t>(k)];
        matvec_transpose_acc(params.out_w, glogits.data(), grad_gru2_out.row(t));
    }

    auto g2 = bigru_backward(params.gru2, cache.gru2, grad_gru2_out);
    grads.gru2.fwd = std::move(g2.grads.fwd);
    grads.gru2.bwd = std::move(g2.grads.bwd);
    auto g1 = bigru_backward(params.gru1, cache.gru1, g2.grad_seq);
    grads.gru1.fwd = std::move(g1.grads.fwd);
    grads.gru1.bwd = std::move(g1.grads.bwd);

    Tensor<T> g = unflatten_per_timestep(g1.grad_seq, cache.block3_shape);
    for (int i = 2; i >= 0; --i) {
        if (i == 1 && params.fpa_f2) {
            auto f = fpa_backward(*params.fpa_f2, cache.fpa_f2, g);
            store_fpa_grads(*grads.fpa_f2, f.grads);
            g = std::move(f.grad_x);
        }
        if (i == 0 && params.fpa_f1) {
            auto f = fpa_backward(*params.fpa_f1, cache.fpa_f1, g);
            store_fpa_grads(*grads.fpa_f1, f.grads);
            g = std::move(f.grad_x);
        }
        auto bg = stcnn_block_backward(params.blocks[static_cast<std::size_t>(i)],
                                       cache.blocks[static_cast<std::size_t>(i)], g);
        grads.blocks[static_cast<std::size_t>(i)].conv.weights = std::move(bg.conv.grad_weights);
        grads.blocks[static_cast<std::size_t>(i)].conv.bias = std::move(bg.conv.grad_bias);
        grads.blocks[static_cast<std::size_t>(i)].bn.gamma = std::move(bg.grad_gamma);
        grads.blocks[static_cast<std::size_t>(i)].bn.beta = std::move(bg.grad_beta);
        g = std::move(bg.grad_in);
    }
    if (params.fpa_input) {
        auto f = fpa_backward(*params.fpa_input, cache.fpa_input, g);
        store_fpa_grads(*grads.fpa_input, f.grads);
    }
    return grads;
}

template <typename T>
void apply_running_updates(ModelParams<T>& params, const LipnetCache<T>& cache) {
    if (!cache.valid) throw CorruptionError("apply_running_updates: stale cache");
    if (params.fpa_input) fpa_update_running(*params.fpa_input, cache.fpa_input);
    for (int i = 0; i < 3; ++i) {
        batchnorm_update_running(params.blocks[static_cast<std::size_t>(i)].bn,
                                 cache.blocks[static_cast<std::size_t>(i)].bn);
        if (i == 0 && params.fpa_f1) fpa_update_running(*params.fpa_f1, cache.fpa_f1);
        if (i == 1 && params.fpa_f2) fpa_update_running(*params.fpa_f2, cache.fpa_f2);
    }
}

template <typename T>
AdamState<T> adam_init(ModelParams<T>& params) {
    AdamState<T> s;
    for (auto view : tensor_views(params)) {
        if (!view.learnable) continue;
        s.m.emplace_back(view.flat->size(), T(0));
        s.v.emplace_back(view.flat->size(), T(0));
    }
    return s;
}

template <typename T>
void adam_update(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v,
                 std::int64_t step, const AdamConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
        v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

template <typename T>
void adam_step(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
    auto pviews = tensor_views(params);
    auto gviews = tensor_views(grads);
    if (pviews.size() != gviews.size()) throw CorruptionError("adam_step: parameter/gradient layout mismatch");
    for (std::size_t i = 0; i < gviews.size(); ++i) {
        if (!gviews[i].learnable) continue;
        for (const T g : *gviews[i].flat)
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + gviews[i].name);
    }
    ++state.step;
    std::size_t li = 0;
    for (std::size_t i = 0; i < pviews.size(); ++i) {
        if (!pviews[i].learnable) continue;
        adam_update(*pviews[i].flat, *gviews[i].flat, state.m[li], state.v[li], state.step, cfg);
        ++li;
    }
}

namespace {

template <typename T>
void accumulate(ModelParams<T>& into, ModelParams<T>& from, T scale) {
    auto a = tensor_views(into);
    auto b = tensor_views(from);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].learnable) continue;
        for (std::size_t j = 0; j < a[i].flat->size(); ++j) (*a[i].flat)[j] += scale * (*b[i].flat)[j];
    }
}

} // namespace

template <typename T>
T train_epoch(const std::vector<Sample<T>>& data, ModelParams<T>& params, AdamState<T>& adam,
              const TrainConfig& cfg, std::uint64_t seed, std::int64_t epoch) {
    if (data.empty()) throw ArgumentError("train_epoch: empty dataset");
    const std::int64_t n = static_cast<std::int64_t>(data.size());

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    const CounterRng shuffle(seed, "shuffle");
    for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(
            shuffle.below(static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                              static_cast<std::uint64_t>(i),
                          static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    const std::uint64_t drop_base = stream_key(seed, "dropout");
    T loss_sum = T(0);
    for (std::int64_t start = 0; start < n; start += cfg.batch) {
        const std::int64_t bsz = std::min<std::int64_t>(cfg.batch, n - start);
        std::vector<ModelParams<T>> sample_grads(static_cast<std::size_t>(bsz));
        std::vector<LipnetCache<T>> sample_caches(static_cast<std::size_t>(bsz));
        std::vector<T> sample_loss(static_cast<std::size_t>(bsz), T(0));
        std::exception_ptr error;

#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < bsz; ++b) {
            try {
                const std::int64_t idx = order[static_cast<std::size_t>(start + b)];
                const Sample<T>& sample = data[static_cast<std::size_t>(idx)];
                const std::uint64_t drop_seed =
                    mix64(drop_base + static_cast<std::uint64_t>(epoch) * 0x10001ull +
                          static_cast<std::uint64_t>(idx) * kGolden);
                auto fwd = lipnet_forward(params, sample.video, Mode::train, drop_seed);
                auto ctc = ctc_loss_grad(fwd.log_probs, sample.label);
                sample_loss[static_cast<std::size_t>(b)] = ctc.loss;
                sample_grads[static_cast<std::size_t>(b)] =
                    lipnet_backward(params, fwd.cache, ctc.grad_log_probs);
                sample_caches[static_cast<std::size_t>(b)] = std::move(fwd.cache);
            } catch (...) {
#pragma omp critical
                {
                    if (!error) error = std::current_exception();
                }
            }
        }
        if (error) {
            try {
                std::rethrow_exception(error);
            } catch (const std::exception& e) {
                throw NumericError("train_epoch: batch starting at sample " + std::to_string(start) +
                                   " failed: " + e.what());
            }
        }

        ModelParams<T> batch_grads = grads_like(params);
        for (std::int64_t b = 0; b < bsz; ++b) {
            accumulate(batch_grads, sample_grads[static_cast<std::size_t>(b)], T(1) / static_cast<T>(bsz));
            apply_running_updates(params, sample_caches[static_cast<std::size_t>(b)]);
            loss_sum += sample_loss[static_cast<std::size_t>(b)];
        }
        adam_step(params, batch_grads, adam, cfg.adam);
    }
    return loss_sum / static_cast<T>(n);
}

#define FPA3D_MODEL_INSTANTIATE(T)                                                                        \
    template ModelParams<T> init_model(const LipNetConfig&, std::uint64_t);                               \
    template ModelParams<T> grads_like(const ModelParams<T>&);                                            \
    template std::vector<TensorView<T>> tensor_views(ModelParams<T>&);                                    \
    template BlockResult<T> stcnn_block_forward(const Tensor<T>&, const StcnnBlock<T>&, double, Mode,     \
                                                std::uint64_t);                                           \
    template BlockGrads<T> stcnn_block_backward(const StcnnBlock<T>&, const BlockCache<T>&,               \
                                                const Tensor<T>&);                                        \
    template LipnetForward<T> lipnet_forward(const ModelParams<T>&, const Tensor<T>&, Mode,               \
                                             std::uint64_t);                                              \
    template ModelParams<T> lipnet_backward(const ModelParams<T>&, const LipnetCache<T>&, const Mat<T>&); \
    template void apply_running_updates(ModelParams<T>&, const LipnetCache<T>&);                          \
    template AdamState<T> adam_init(ModelParams<T>&);                                                     \
    template void adam_update(std::vector<T>&, const std::vector<T>&, std::vector<T>&, std::vector<T>&,   \
                              std::int64_t, const AdamConfig&);                                           \
    template void adam_step(ModelParams<T>&, ModelParams<T>&, AdamState<T>&, const AdamConfig&);          \
    template T train_epoch(const std::vector<Sample<T>>&, ModelParams<T>&, AdamState<T>&,                 \
                           const TrainConfig&, std::uint64_t, std::int64_t);

FPA3D_MODEL_INSTANTIATE(float)
FPA3D_MODEL_INSTANTIATE(double)

#undef FPA3D_MODEL_INSTANTIATE

} // namespace fpa3d
