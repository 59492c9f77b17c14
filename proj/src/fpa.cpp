// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/fpa.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <string>

#include "fpa3d/rng.hpp"

namespace fpa3d {

namespace {

// 2D variant: per-frame 3x3 convs, time untouched. 3D variant: 3x3x3 convs
// strided in time as well.
template <typename T>
Conv3dParams<T> make_conv(std::int64_t channels, FpaVariant variant, bool strided) {
    Conv3dParams<T> p;
    p.c_out = channels;
    p.c_in = channels;
    const bool temporal = variant == FpaVariant::spatiotemporal_3d;
    p.kt = temporal ? 3 : 1;
    p.kh = 3;
    p.kw = 3;
    p.pad = {temporal ? 1 : 0, 1, 1};
    if (strided)
        p.stride = {temporal ? 2 : 1, 2, 2};
    else
        p.stride = {1, 1, 1};
    p.weights.assign(static_cast<std::size_t>(p.c_out * p.c_in * p.kt * p.kh * p.kw), T(0));
    p.bias.assign(static_cast<std::size_t>(p.c_out), T(0));
    return p;
}

template <typename T>
void init_conv(Conv3dParams<T>& p, std::uint64_t seed, const std::string& stream) {
    const CounterRng rng(seed, stream);
    const double bound = std::sqrt(1.0 / static_cast<double>(p.c_in * p.kt * p.kh * p.kw));
    for (std::size_t i = 0; i < p.weights.size(); ++i)
        p.weights[i] = static_cast<T>(rng.uniform(i, -bound, bound));
}

// Spatial bilinear first, then the replicate-pad temporal rule.
template <typename T>
Tensor<T> resize_to(const Tensor<T>& m, const Shape5& target) {
    Tensor<T> r = m;
    if (r.shape.h != target.h || r.shape.w != target.w) r = upsample_bilinear_spatial(r, target.h, target.w);
    if (r.shape.t != target.t) r = upsample_temporal(r, target.t);
    return r;
}

template <typename T>
Tensor<T> resize_backward(const Tensor<T>& grad, const Shape5& src_shape) {
    Tensor<T> g = grad;
    if (g.shape.t != src_shape.t) g = upsample_temporal_backward(g, src_shape.t);
    if (g.shape.h != src_shape.h || g.shape.w != src_shape.w) {
        Shape5 mid = src_shape;
        mid.t = g.shape.t;
        g = upsample_bilinear_spatial_backward(g, mid);
    }
    return g;
}

std::uint64_t site_seed(std::uint64_t base, std::size_t ordinal) {
    return mix64(base + (ordinal + 1) * kGolden);
}

std::atomic<bool> degenerate_warned{false};

} // namespace

std::vector<Shape5> fpa_level_shapes(const FpaConfig& config, const Shape5& x) {
    std::vector<Shape5> shapes;
    Shape5 cur = x;
    const bool temporal = config.variant == FpaVariant::spatiotemporal_3d;
    auto halve = [](std::int64_t d) { return (d + 1) / 2; };
    for (int i = 0; i < config.levels; ++i) {
        if (temporal) cur.t = halve(cur.t);
        cur.h = halve(cur.h);
        cur.w = halve(cur.w);
        shapes.push_back(cur);
    }
    return shapes;
}

template <typename T>
FpaModule<T> fpa_build(const FpaConfig& config, std::int64_t channels, std::uint64_t init_seed) {
    if (channels < 1) throw ArgumentError("fpa_build: channels must be >= 1");
    if (config.levels < 1) throw ArgumentError("fpa_build: levels must be >= 1");
    FpaModule<T> m;
    m.config = config;
    m.channels = channels;
    for (int i = 0; i < config.levels; ++i) {
        FpaLevel<T> level;
        level.down = make_conv<T>(channels, config.variant, true);
        level.fuse = make_conv<T>(channels, config.variant, false);
        init_conv(level.down, init_seed, "fpa.down" + std::to_string(i) + ".w");
        init_conv(level.fuse, init_seed, "fpa.fuse" + std::to_string(i) + ".w");
        level.down_bn = BatchNormState<T>::identity(channels);
        level.fuse_bn = BatchNormState<T>::identity(channels);
        m.levels.push_back(std::move(level));
    }
    return m;
}

template <typename T>
FpaForwardResult<T> fpa_forward(const FpaModule<T>& m, const Tensor<T>& x, Mode mode,
                                std::uint64_t dropout_seed) {
    if (x.shape.c != m.channels)
        throw ShapeError("fpa_forward: input has " + std::to_string(x.shape.c) + " channels, module built for " +
                         std::to_string(m.channels));
    const int L = m.config.levels;
    const auto level_shapes = fpa_level_shapes(m.config, x.shape);
    if (!degenerate_warned.load(std::memory_order_relaxed)) {
        const Shape5& deep = level_shapes.back();
        const bool degenerate = (deep.h == 1 && x.shape.h > 1) || (deep.w == 1 && x.shape.w > 1) ||
                                (m.config.variant == FpaVariant::spatiotemporal_3d && deep.t == 1 && x.shape.t > 1);
        if (degenerate && !degenerate_warned.exchange(true)) {
            std::cerr << "fpa: warning: deepest pyramid level is degenerate (" << deep.str() << ") for input "
                      << x.shape.str() << "\n";
        }
    }

    FpaCache<T> cache;
    cache.x = x;
    cache.mode = mode;
    cache.levels.resize(static_cast<std::size_t>(L));

    // Bottom-up pathway.
    Tensor<T> cur = x;
    for (int i = 0; i < L; ++i) {
        auto& lc = cache.levels[static_cast<std::size_t>(i)];
        const auto& level = m.levels[static_cast<std::size_t>(i)];
        lc.in = cur;
        Tensor<T> a;
        try {
            a = conv3d(cur, level.down);
        } catch (const ShapeError& e) {
            throw ShapeError("fpa level " + std::to_string(i + 1) + ": " + e.what());
        }
        if (m.config.use_batchnorm) {
            auto bn = batchnorm3d(a, level.down_bn, mode);
            lc.down_bn = std::move(bn.cache);
            a = std::move(bn.out);
        }
        lc.relu_out = activation(a, Act::relu);
        if (m.config.use_dropout) {
            auto d = dropout3d(lc.relu_out, m.config.dropout_rate, site_seed(dropout_seed, static_cast<std::size_t>(i)),
                               mode);
            lc.down_drop_mask = std::move(d.mask);
            lc.level_out = std::move(d.out);
        } else {
            lc.level_out = lc.relu_out;
        }
        cur = lc.level_out;
    }

    // Top-down fusion, coarsest to finest.
    Tensor<T> m_cur;
    for (int i = L - 1; i >= 0; --i) {
        auto& lc = cache.levels[static_cast<std::size_t>(i)];
        const auto& level = m.levels[static_cast<std::size_t>(i)];
        Tensor<T> f = conv3d(lc.level_out, level.fuse);
        if (m.config.use_batchnorm) {
            auto bn = batchnorm3d(f, level.fuse_bn, mode);
            lc.fuse_bn = std::move(bn.cache);
            f = std::move(bn.out);
        }
        if (m.config.use_dropout) {
            auto d = dropout3d(f, m.config.dropout_rate,
                               site_seed(dropout_seed, static_cast<std::size_t>(L + i)), mode);
            lc.fuse_drop_mask = std::move(d.mask);
            f = std::move(d.out);
        }
        if (i == L - 1)
            m_cur = std::move(f);
        else
            m_cur = add(f, resize_to(m_cur, lc.level_out.shape));
    }

    Tensor<T> mask_pre = resize_to(m_cur, x.shape);
    cache.mask = m.config.mask_activation == MaskActivation::sigmoid ? activation(mask_pre, Act::sigmoid)
                                                                     : std::move(mask_pre);
    cache.valid = true;

    FpaForwardResult<T> res;
    res.out = mul(x, cache.mask);
    res.cache = std::move(cache);
    return res;
}

template <typename T>
void fpa_update_running(FpaModule<T>& m, const FpaCache<T>& cache) {
    if (!cache.valid || cache.mode != Mode::train)
        throw CorruptionError("fpa_update_running: cache is not a valid train-mode cache");
    if (!m.config.use_batchnorm) return;
    for (std::size_t i = 0; i < m.levels.size(); ++i) {
        batchnorm_update_running(m.levels[i].down_bn, cache.levels[i].down_bn);
        batchnorm_update_running(m.levels[i].fuse_bn, cache.levels[i].fuse_bn);
    }
}

template <typename T>
FpaBackwardResult<T> fpa_backward(const FpaModule<T>& m, const FpaCache<T>& cache, const Tensor<T>& grad_out) {
    if (!cache.valid) throw CorruptionError("fpa_backward: stale or missing cache");
    if (!(grad_out.shape == cache.x.shape)) throw ShapeError("fpa_backward: grad_out shape mismatch");
    const int L = m.config.levels;
    if (cache.levels.size() != static_cast<std::size_t>(L))
        throw CorruptionError("fpa_backward: cache level count mismatch");

    FpaBackwardResult<T> res;
    res.grads.levels.resize(static_cast<std::size_t>(L));

    // Product rule through out = x * mask.
    Tensor<T> grad_x = mul(grad_out, cache.mask);
    Tensor<T> grad_mask = mul(grad_out, cache.x);
    if (m.config.mask_activation == MaskActivation::sigmoid)
        grad_mask = activation_backward(Act::sigmoid, cache.mask, cache.mask, grad_mask);

    std::vector<Tensor<T>> grad_level(static_cast<std::size_t>(L)); // d loss / d L_i
    Tensor<T> gm = resize_backward(grad_mask, cache.levels[0].level_out.shape);

    // Top-down pathway in reverse: fusion conv chain plus the addition split.
    for (int i = 0; i < L; ++i) {
        auto& lc = cache.levels[static_cast<std::size_t>(i)];
        const auto& level = m.levels[static_cast<std::size_t>(i)];
        auto& lg = res.grads.levels[static_cast<std::size_t>(i)];

        Tensor<T> gm_next;
        if (i + 1 < L) gm_next = resize_backward(gm, cache.levels[static_cast<std::size_t>(i + 1)].level_out.shape);

        Tensor<T> g = gm;
        if (m.config.use_dropout) g = mul(g, lc.fuse_drop_mask);
        if (m.config.use_batchnorm) {
            auto bg = batchnorm3d_backward(lc.fuse_bn, level.fuse_bn.gamma, g);
            lg.fuse_gamma = std::move(bg.grad_gamma);
            lg.fuse_beta = std::move(bg.grad_beta);
            g = std::move(bg.grad_x);
        }
        auto cg = conv3d_backward(lc.level_out, level.fuse, g);
        lg.fuse_w = std::move(cg.grad_weights);
        lg.fuse_b = std::move(cg.grad_bias);
        grad_level[static_cast<std::size_t>(i)] = std::move(cg.grad_x);

        if (i + 1 < L) gm = std::move(gm_next);
    }

    // Bottom-up pathway in reverse.
    for (int i = L - 1; i >= 0; --i) {
        auto& lc = cache.levels[static_cast<std::size_t>(i)];
        const auto& level = m.levels[static_cast<std::size_t>(i)];
        auto& lg = res.grads.levels[static_cast<std::size_t>(i)];

        Tensor<T> g = std::move(grad_level[static_cast<std::size_t>(i)]);
        if (m.config.use_dropout) g = mul(g, lc.down_drop_mask);
        g = activation_backward(Act::relu, lc.relu_out, lc.relu_out, g);
        if (m.config.use_batchnorm) {
            auto bg = batchnorm3d_backward(lc.down_bn, level.down_bn.gamma, g);
            lg.down_gamma = std::move(bg.grad_gamma);
            lg.down_beta = std::move(bg.grad_beta);
            g = std::move(bg.grad_x);
        }
        auto cg = conv3d_backward(lc.in, level.down, g);
        lg.down_w = std::move(cg.grad_weights);
        lg.down_b = std::move(cg.grad_bias);
        if (i > 0)
            grad_level[static_cast<std::size_t>(i - 1)] =
                add(grad_level[static_cast<std::size_t>(i - 1)], cg.grad_x);
        else
            grad_x = add(grad_x, cg.grad_x);
    }

    res.grad_x = std::move(grad_x);
    return res;
}

#define FPA3D_FPA_INSTANTIATE(T)                                                                           \
    template FpaModule<T> fpa_build(const FpaConfig&, std::int64_t, std::uint64_t);                        \
    template FpaForwardResult<T> fpa_forward(const FpaModule<T>&, const Tensor<T>&, Mode, std::uint64_t);  \
    template void fpa_update_running(FpaModule<T>&, const FpaCache<T>&);                                   \
    template FpaBackwardResult<T> fpa_backward(const FpaModule<T>&, const FpaCache<T>&, const Tensor<T>&);

FPA3D_FPA_INSTANTIATE(float)
FPA3D_FPA_INSTANTIATE(double)

#undef FPA3D_FPA_INSTANTIATE

} // namespace fpa3d
