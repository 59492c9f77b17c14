// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/kernels_ref.hpp"

#include <algorithm>
#include <cmath>

namespace fpa3d::ref {

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p) {
    const Shape5 os = conv3d_out_shape(x.shape, p);
    Tensor<T> out(os);
    const Shape5& xs = x.shape;
    for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t co = 0; co < os.c; ++co)
            for (std::int64_t to = 0; to < os.t; ++to)
                for (std::int64_t ho = 0; ho < os.h; ++ho)
                    for (std::int64_t wo = 0; wo < os.w; ++wo) {
                        T acc = p.bias[static_cast<std::size_t>(co)];
                        for (std::int64_t kt = 0; kt < p.kt; ++kt) {
                            const std::int64_t ti = to * p.stride[0] - p.pad[0] + kt;
                            if (ti < 0 || ti >= xs.t) continue;
                            for (std::int64_t kh = 0; kh < p.kh; ++kh) {
                                const std::int64_t hi = ho * p.stride[1] - p.pad[1] + kh;
                                if (hi < 0 || hi >= xs.h) continue;
                                for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                                    const std::int64_t wi = wo * p.stride[2] - p.pad[2] + kw;
                                    if (wi < 0 || wi >= xs.w) continue;
                                    for (std::int64_t ci = 0; ci < p.c_in; ++ci)
                                        acc += x.data[x.index(n, ci, ti, hi, wi)] *
                                               p.weights[p.widx(co, ci, kt, kh, kw)];
                                }
                            }
                        }
                        out.data[out.index(n, co, to, ho, wo)] = acc;
                    }
    return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out) {
    const Shape5 os = conv3d_out_shape(x.shape, p);
    if (!(grad_out.shape == os)) throw ShapeError("ref::conv3d_backward: grad_out shape mismatch");
    const Shape5& xs = x.shape;
    Conv3dGrads<T> g;
    g.grad_x = Tensor<T>(xs);
    g.grad_weights.assign(p.weights.size(), T(0));
    g.grad_bias.assign(p.bias.size(), T(0));

    for (std::int64_t co = 0; co < p.c_out; ++co) {
        T acc = T(0);
        for (std::int64_t n = 0; n < os.n; ++n)
            for (std::int64_t to = 0; to < os.t; ++to)
                for (std::int64_t ho = 0; ho < os.h; ++ho)
                    for (std::int64_t wo = 0; wo < os.w; ++wo)
                        acc += grad_out.data[grad_out.index(n, co, to, ho, wo)];
        g.grad_bias[static_cast<std::size_t>(co)] = acc;
    }

    for (std::int64_t co = 0; co < p.c_out; ++co)
        for (std::int64_t ci = 0; ci < p.c_in; ++ci)
            for (std::int64_t kt = 0; kt < p.kt; ++kt)
                for (std::int64_t kh = 0; kh < p.kh; ++kh)
                    for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                        T acc = T(0);
                        for (std::int64_t n = 0; n < os.n; ++n)
                            for (std::int64_t to = 0; to < os.t; ++to) {
                                const std::int64_t ti = to * p.stride[0] - p.pad[0] + kt;
                                if (ti < 0 || ti >= xs.t) continue;
                                for (std::int64_t ho = 0; ho < os.h; ++ho) {
                                    const std::int64_t hi = ho * p.stride[1] - p.pad[1] + kh;
                                    if (hi < 0 || hi >= xs.h) continue;
                                    for (std::int64_t wo = 0; wo < os.w; ++wo) {
                                        const std::int64_t wi = wo * p.stride[2] - p.pad[2] + kw;
                                        if (wi < 0 || wi >= xs.w) continue;
                                        acc += x.data[x.index(n, ci, ti, hi, wi)] *
                                               grad_out.data[grad_out.index(n, co, to, ho, wo)];
                                    }
                                }
                            }
                        g.grad_weights[p.widx(co, ci, kt, kh, kw)] = acc;
                    }

    for (std::int64_t n = 0; n < xs.n; ++n)
        for (std::int64_t ci = 0; ci < xs.c; ++ci)
            for (std::int64_t ti = 0; ti < xs.t; ++ti)
                for (std::int64_t hi = 0; hi < xs.h; ++hi)
                    for (std::int64_t wi = 0; wi < xs.w; ++wi) {
                        T acc = T(0);
                        for (std::int64_t co = 0; co < p.c_out; ++co)
                            for (std::int64_t kt = 0; kt < p.kt; ++kt) {
                                const std::int64_t tnum = ti + p.pad[0] - kt;
                                if (tnum < 0 || tnum % p.stride[0] != 0) continue;
                                const std::int64_t to = tnum / p.stride[0];
                                if (to >= os.t) continue;
                                for (std::int64_t kh = 0; kh < p.kh; ++kh) {
                                    const std::int64_t hnum = hi + p.pad[1] - kh;
                                    if (hnum < 0 || hnum % p.stride[1] != 0) continue;
                                    const std::int64_t ho = hnum / p.stride[1];
                                    if (ho >= os.h) continue;
                                    for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                                        const std::int64_t wnum = wi + p.pad[2] - kw;
                                        if (wnum < 0 || wnum % p.stride[2] != 0) continue;
                                        const std::int64_t wo = wnum / p.stride[2];
                                        if (wo >= os.w) continue;
                                        acc += p.weights[p.widx(co, ci, kt, kh, kw)] *
                                               grad_out.data[grad_out.index(n, co, to, ho, wo)];
                                    }
                                }
                            }
                        g.grad_x.data[g.grad_x.index(n, ci, ti, hi, wi)] = acc;
                    }
    return g;
}

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::array<std::int64_t, 3> window,
                        std::array<std::int64_t, 3> stride) {
    const Shape5& xs = x.shape;
    Shape5 os = xs;
    os.t = (xs.t - window[0]) / stride[0] + 1;
    os.h = (xs.h - window[1]) / stride[1] + 1;
    os.w = (xs.w - window[2]) / stride[2] + 1;
    if (os.t < 1 || os.h < 1 || os.w < 1) throw ShapeError("ref::maxpool3d: empty output");
    PoolResult<T> res{Tensor<T>(os), std::vector<std::int64_t>(static_cast<std::size_t>(os.numel()), 0)};
    for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t c = 0; c < os.c; ++c)
            for (std::int64_t to = 0; to < os.t; ++to)
                for (std::int64_t ho = 0; ho < os.h; ++ho)
                    for (std::int64_t wo = 0; wo < os.w; ++wo) {
                        T best{};
                        std::int64_t best_idx = -1;
                        for (std::int64_t dt = 0; dt < window[0]; ++dt)
                            for (std::int64_t dh = 0; dh < window[1]; ++dh)
                                for (std::int64_t dw = 0; dw < window[2]; ++dw) {
                                    const std::size_t idx = x.index(n, c, to * stride[0] + dt,
                                                                    ho * stride[1] + dh, wo * stride[2] + dw);
                                    if (best_idx < 0 || x.data[idx] > best) {
                                        best = x.data[idx];
                                        best_idx = static_cast<std::int64_t>(idx);
                                    }
                                }
                        const std::size_t oidx = res.out.index(n, c, to, ho, wo);
                        res.out.data[oidx] = best;
                        res.argmax[oidx] = best_idx;
                    }
    return res;
}

template <typename T>
Tensor<T> upsample_bilinear_spatial(const Tensor<T>& x, std::int64_t h_out, std::int64_t w_out) {
    Shape5 os = x.shape;
    os.h = h_out;
    os.w = w_out;
    Tensor<T> out(os);
    auto coord = [](std::int64_t dst, std::int64_t dst_len, std::int64_t src_len) {
        if (dst_len <= 1 || src_len <= 1) return 0.0;
        return static_cast<double>(dst) * static_cast<double>(src_len - 1) / static_cast<double>(dst_len - 1);
    };
    for (std::int64_t f = 0; f < os.n * os.c * os.t; ++f) {
        const T* src = &x.data[static_cast<std::size_t>(f * x.shape.h * x.shape.w)];
        T* dst = &out.data[static_cast<std::size_t>(f * os.h * os.w)];
        for (std::int64_t ho = 0; ho < os.h; ++ho) {
            const double cy = coord(ho, os.h, x.shape.h);
            const auto y0 = static_cast<std::int64_t>(std::floor(cy));
            const std::int64_t y1 = std::min(y0 + 1, x.shape.h - 1);
            const double fy = cy - static_cast<double>(y0);
            for (std::int64_t wo = 0; wo < os.w; ++wo) {
                const double cx = coord(wo, os.w, x.shape.w);
                const auto x0 = static_cast<std::int64_t>(std::floor(cx));
                const std::int64_t x1 = std::min(x0 + 1, x.shape.w - 1);
                const double fx = cx - static_cast<double>(x0);
                const double v00 = static_cast<double>(src[y0 * x.shape.w + x0]);
                const double v01 = static_cast<double>(src[y0 * x.shape.w + x1]);
                const double v10 = static_cast<double>(src[y1 * x.shape.w + x0]);
                const double v11 = static_cast<double>(src[y1 * x.shape.w + x1]);
                const double top = v00 + fx * (v01 - v00);
                const double bot = v10 + fx * (v11 - v10);
                dst[ho * os.w + wo] = static_cast<T>(top + fy * (bot - top));
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
    if (!(a.shape == b.shape)) throw ShapeError("ref::elementwise: shape mismatch");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = kind == Elementwise::add ? a.data[i] + b.data[i] : a.data[i] * b.data[i];
    return out;
}

#define FPA3D_REF_INSTANTIATE(T)                                                                          \
    template Tensor<T> conv3d(const Tensor<T>&, const Conv3dParams<T>&);                                  \
    template Conv3dGrads<T> conv3d_backward(const Tensor<T>&, const Conv3dParams<T>&, const Tensor<T>&);  \
    template PoolResult<T> maxpool3d(const Tensor<T>&, std::array<std::int64_t, 3>,                       \
                                     std::array<std::int64_t, 3>);                                        \
    template Tensor<T> upsample_bilinear_spatial(const Tensor<T>&, std::int64_t, std::int64_t);           \
    template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, Elementwise);

FPA3D_REF_INSTANTIATE(float)
FPA3D_REF_INSTANTIATE(double)

#undef FPA3D_REF_INSTANTIATE

} // namespace fpa3d::ref
