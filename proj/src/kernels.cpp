// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace fpa3d {

namespace {

std::int64_t out_extent(std::int64_t d, std::int64_t pad, std::int64_t k, std::int64_t stride) {
    return (d + 2 * pad - k) / stride + 1;
}

} // namespace

template <typename T>
void Conv3dParams<T>::validate() const {
    if (c_out < 1 || c_in < 1 || kt < 1 || kh < 1 || kw < 1)
        throw ShapeError("conv3d: kernel extents and channel counts must be >= 1");
    if (stride[0] < 1 || stride[1] < 1 || stride[2] < 1) throw ShapeError("conv3d: strides must be >= 1");
    if (pad[0] < 0 || pad[1] < 0 || pad[2] < 0) throw ShapeError("conv3d: padding must be >= 0");
    const auto need = static_cast<std::size_t>(c_out * c_in * kt * kh * kw);
    if (weights.size() != need || bias.size() != static_cast<std::size_t>(c_out))
        throw ShapeError("conv3d: parameter buffer sizes do not match declared extents");
}

template <typename T>
Shape5 conv3d_out_shape(const Shape5& x, const Conv3dParams<T>& p) {
    p.validate();
    if (x.c != p.c_in)
        throw ShapeError("conv3d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                         std::to_string(p.c_in));
    Shape5 out = x;
    out.c = p.c_out;
    out.t = out_extent(x.t, p.pad[0], p.kt, p.stride[0]);
    out.h = out_extent(x.h, p.pad[1], p.kh, p.stride[1]);
    out.w = out_extent(x.w, p.pad[2], p.kw, p.stride[2]);
    if (out.t < 1 || out.h < 1 || out.w < 1)
        throw ShapeError("conv3d: empty output " + out.str() + " for input " + x.str());
    return out;
}

// Accumulation per output element runs in (k_t, k_h, k_w, c_in) order; the
// loops below only hoist addressing and batch the w_out row so the inner loop
// vectorizes, which keeps results bit-identical to the naive reference.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p) {
    const Shape5 os = conv3d_out_shape(x.shape, p);
    Tensor<T> out(os);
    const Shape5& xs = x.shape;
    const std::int64_t st = p.stride[0], sh = p.stride[1], sw = p.stride[2];
    const std::int64_t x_cstride = xs.t * xs.h * xs.w;

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t co = 0; co < os.c; ++co) {
            std::vector<T> acc(static_cast<std::size_t>(os.w));
            for (std::int64_t to = 0; to < os.t; ++to) {
                const std::int64_t t0 = to * st - p.pad[0];
                for (std::int64_t ho = 0; ho < os.h; ++ho) {
                    const std::int64_t h0 = ho * sh - p.pad[1];
                    std::fill(acc.begin(), acc.end(), p.bias[static_cast<std::size_t>(co)]);
                    for (std::int64_t kt = 0; kt < p.kt; ++kt) {
                        const std::int64_t ti = t0 + kt;
                        if (ti < 0 || ti >= xs.t) continue;
                        for (std::int64_t kh = 0; kh < p.kh; ++kh) {
                            const std::int64_t hi = h0 + kh;
                            if (hi < 0 || hi >= xs.h) continue;
                            const T* xbase = &x.data[x.index(n, 0, ti, hi, 0)];
                            const T* wbase = &p.weights[p.widx(co, 0, kt, kh, 0)];
                            const std::int64_t wstep = p.kt * p.kh * p.kw;
                            for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                                const std::int64_t off = kw - p.pad[2];
                                // valid wo range: 0 <= wo*sw + off < xs.w
                                std::int64_t lo = 0;
                                if (off < 0) lo = (-off + sw - 1) / sw;
                                std::int64_t hi_w = os.w;
                                if ((xs.w - 1 - off) / sw + 1 < hi_w) hi_w = (xs.w - 1 - off) / sw + 1;
                                for (std::int64_t ci = 0; ci < p.c_in; ++ci) {
                                    const T w = wbase[ci * wstep + kw];
                                    const T* xrow = xbase + ci * x_cstride + off;
                                    if (sw == 1) {
                                        for (std::int64_t wo = lo; wo < hi_w; ++wo) acc[wo] += w * xrow[wo];
                                    } else {
                                        for (std::int64_t wo = lo; wo < hi_w; ++wo)
                                            acc[wo] += w * xrow[wo * sw];
                                    }
                                }
                            }
                        }
                    }
                    std::copy(acc.begin(), acc.end(), &out.data[out.index(n, co, to, ho, 0)]);
                }
            }
        }
    }
    return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out) {
    const Shape5 os = conv3d_out_shape(x.shape, p);
    if (!(grad_out.shape == os))
        throw ShapeError("conv3d_backward: grad_out " + grad_out.shape.str() + " does not match forward output " +
                         os.str());
    const Shape5& xs = x.shape;
    Conv3dGrads<T> g;
    g.grad_x = Tensor<T>(xs);
    g.grad_weights.assign(p.weights.size(), T(0));
    g.grad_bias.assign(p.bias.size(), T(0));

    // grad_bias: independent sums per output channel.
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < p.c_out; ++co) {
        T acc = T(0);
        for (std::int64_t n = 0; n < os.n; ++n)
            for (std::int64_t to = 0; to < os.t; ++to)
                for (std::int64_t ho = 0; ho < os.h; ++ho)
                    for (std::int64_t wo = 0; wo < os.w; ++wo)
                        acc += grad_out.data[grad_out.index(n, co, to, ho, wo)];
        g.grad_bias[static_cast<std::size_t>(co)] = acc;
    }

    // grad_weights: each kernel tap reduces over (n, out positions) in a
    // fixed (n, to, ho, wo) order; addressing hoisted out of the inner loop.
    const std::int64_t taps = p.c_out * p.c_in * p.kt * p.kh * p.kw;
#pragma omp parallel for schedule(static)
    for (std::int64_t tap = 0; tap < taps; ++tap) {
        std::int64_t rem = tap;
        const std::int64_t kw = rem % p.kw; rem /= p.kw;
        const std::int64_t kh = rem % p.kh; rem /= p.kh;
        const std::int64_t kt = rem % p.kt; rem /= p.kt;
        const std::int64_t ci = rem % p.c_in; rem /= p.c_in;
        const std::int64_t co = rem;
        const std::int64_t off = kw - p.pad[2];
        std::int64_t lo = 0;
        if (off < 0) lo = (-off + p.stride[2] - 1) / p.stride[2];
        std::int64_t hi_w = os.w;
        if ((xs.w - 1 - off) / p.stride[2] + 1 < hi_w) hi_w = (xs.w - 1 - off) / p.stride[2] + 1;
        T acc = T(0);
        for (std::int64_t n = 0; n < os.n; ++n) {
            for (std::int64_t to = 0; to < os.t; ++to) {
                const std::int64_t ti = to * p.stride[0] - p.pad[0] + kt;
                if (ti < 0 || ti >= xs.t) continue;
                for (std::int64_t ho = 0; ho < os.h; ++ho) {
                    const std::int64_t hi = ho * p.stride[1] - p.pad[1] + kh;
                    if (hi < 0 || hi >= xs.h) continue;
                    const T* xrow = &x.data[x.index(n, ci, ti, hi, 0)] + off;
                    const T* grow = &grad_out.data[grad_out.index(n, co, to, ho, 0)];
                    if (p.stride[2] == 1) {
                        for (std::int64_t wo = lo; wo < hi_w; ++wo) acc += xrow[wo] * grow[wo];
                    } else {
                        for (std::int64_t wo = lo; wo < hi_w; ++wo) acc += xrow[wo * p.stride[2]] * grow[wo];
                    }
                }
            }
        }
        g.grad_weights[static_cast<std::size_t>(tap)] = acc;
    }

    // grad_x: gather over the outputs each input element fed, accumulating in
    // (c_out, k_t, k_h, k_w) order per input element.
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t ci = 0; ci < xs.c; ++ci) {
            std::vector<T> acc(static_cast<std::size_t>(xs.w));
            for (std::int64_t ti = 0; ti < xs.t; ++ti) {
                for (std::int64_t hi = 0; hi < xs.h; ++hi) {
                    std::fill(acc.begin(), acc.end(), T(0));
                    for (std::int64_t co = 0; co < p.c_out; ++co) {
                        const T* gbase = &grad_out.data[grad_out.index(n, co, 0, 0, 0)];
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
                                const T* grow = gbase + (to * os.h + ho) * os.w;
                                for (std::int64_t kw = 0; kw < p.kw; ++kw) {
                                    const std::int64_t woff = p.pad[2] - kw; // wo*sw = wi + woff
                                    const T w = p.weights[p.widx(co, ci, kt, kh, kw)];
                                    if (p.stride[2] == 1) {
                                        std::int64_t lo = std::max<std::int64_t>(0, -woff);
                                        std::int64_t hi_i = std::min<std::int64_t>(xs.w, os.w - woff);
                                        for (std::int64_t wi = lo; wi < hi_i; ++wi)
                                            acc[wi] += w * grow[wi + woff];
                                    } else {
                                        for (std::int64_t wo = 0; wo < os.w; ++wo) {
                                            const std::int64_t wi = wo * p.stride[2] - woff;
                                            if (wi >= 0 && wi < xs.w) acc[wi] += w * grow[wo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    std::copy(acc.begin(), acc.end(), &g.grad_x.data[g.grad_x.index(n, ci, ti, hi, 0)]);
                }
            }
        }
    }
    return g;
}

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::array<std::int64_t, 3> window,
                        std::array<std::int64_t, 3> stride) {
    const Shape5& xs = x.shape;
    if (window[0] < 1 || window[1] < 1 || window[2] < 1) throw ShapeError("maxpool3d: window must be >= 1");
    if (stride[0] < 1 || stride[1] < 1 || stride[2] < 1) throw ShapeError("maxpool3d: stride must be >= 1");
    Shape5 os = xs;
    os.t = out_extent(xs.t, 0, window[0], stride[0]);
    os.h = out_extent(xs.h, 0, window[1], stride[1]);
    os.w = out_extent(xs.w, 0, window[2], stride[2]);
    if (os.t < 1 || os.h < 1 || os.w < 1)
        throw ShapeError("maxpool3d: empty output " + os.str() + " for input " + xs.str());

    PoolResult<T> res{Tensor<T>(os), std::vector<std::int64_t>(static_cast<std::size_t>(os.numel()), 0)};
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t c = 0; c < os.c; ++c) {
            for (std::int64_t to = 0; to < os.t; ++to) {
                for (std::int64_t ho = 0; ho < os.h; ++ho) {
                    for (std::int64_t wo = 0; wo < os.w; ++wo) {
                        const std::int64_t t0 = to * stride[0], h0 = ho * stride[1], w0 = wo * stride[2];
                        T best{};
                        std::int64_t best_idx = -1;
                        for (std::int64_t dt = 0; dt < window[0]; ++dt)
                            for (std::int64_t dh = 0; dh < window[1]; ++dh)
                                for (std::int64_t dw = 0; dw < window[2]; ++dw) {
                                    const std::size_t idx = x.index(n, c, t0 + dt, h0 + dh, w0 + dw);
                                    const T v = x.data[idx];
                                    if (best_idx < 0 || v > best) {
                                        best = v;
                                        best_idx = static_cast<std::int64_t>(idx);
                                    }
                                }
                        const std::size_t oidx = res.out.index(n, c, to, ho, wo);
                        res.out.data[oidx] = best;
                        res.argmax[oidx] = best_idx;
                    }
                }
            }
        }
    }
    return res;
}

template <typename T>
Tensor<T> maxpool3d_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& grad_out,
                             const Shape5& input_shape) {
    if (argmax.size() != grad_out.data.size())
        throw CorruptionError("maxpool3d_backward: argmax count does not match grad_out");
    Tensor<T> grad_x(input_shape);
    const std::int64_t slice = input_shape.t * input_shape.h * input_shape.w;
    const std::int64_t oslice = grad_out.shape.t * grad_out.shape.h * grad_out.shape.w;
    const std::int64_t slices = input_shape.n * input_shape.c;
    if (grad_out.shape.n != input_shape.n || grad_out.shape.c != input_shape.c)
        throw ShapeError("maxpool3d_backward: batch/channel mismatch");

    // Validate before entering the parallel region; throwing across an OpenMP
    // boundary is not allowed.
    for (std::int64_t sl = 0; sl < slices; ++sl) {
        const std::int64_t in_lo = sl * slice, in_hi = in_lo + slice;
        for (std::int64_t i = sl * oslice; i < (sl + 1) * oslice; ++i) {
            const std::int64_t src = argmax[static_cast<std::size_t>(i)];
            if (src < in_lo || src >= in_hi)
                throw CorruptionError("maxpool3d_backward: argmax index outside its slice");
        }
    }

    // Argmax indices from one (n, c) slice land in that same input slice, so
    // slices can run in parallel without write conflicts.
#pragma omp parallel for schedule(static)
    for (std::int64_t sl = 0; sl < slices; ++sl) {
        for (std::int64_t i = sl * oslice; i < (sl + 1) * oslice; ++i) {
            const std::int64_t src = argmax[static_cast<std::size_t>(i)];
            grad_x.data[static_cast<std::size_t>(src)] += grad_out.data[static_cast<std::size_t>(i)];
        }
    }
    return grad_x;
}

namespace {

struct LerpAxis {
    std::int64_t i0, i1;
    double frac;
};

LerpAxis lerp_axis(std::int64_t dst, std::int64_t dst_len, std::int64_t src_len) {
    if (dst_len <= 1 || src_len <= 1) return {0, std::min<std::int64_t>(0, src_len - 1), 0.0};
    const double coord = static_cast<double>(dst) * static_cast<double>(src_len - 1) /
                         static_cast<double>(dst_len - 1);
    auto i0 = static_cast<std::int64_t>(std::floor(coord));
    if (i0 > src_len - 1) i0 = src_len - 1;
    const std::int64_t i1 = std::min(i0 + 1, src_len - 1);
    return {i0, i1, coord - static_cast<double>(i0)};
}

} // namespace

template <typename T>
Tensor<T> upsample_bilinear_spatial(const Tensor<T>& x, std::int64_t h_out, std::int64_t w_out) {
    if (h_out < 1 || w_out < 1) throw ShapeError("upsample_bilinear_spatial: target extents must be >= 1");
    Shape5 os = x.shape;
    os.h = h_out;
    os.w = w_out;
    Tensor<T> out(os);
    const std::int64_t frames = os.n * os.c * os.t;
#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < frames; ++f) {
        const T* src = &x.data[static_cast<std::size_t>(f * x.shape.h * x.shape.w)];
        T* dst = &out.data[static_cast<std::size_t>(f * os.h * os.w)];
        for (std::int64_t ho = 0; ho < os.h; ++ho) {
            const LerpAxis ay = lerp_axis(ho, os.h, x.shape.h);
            for (std::int64_t wo = 0; wo < os.w; ++wo) {
                const LerpAxis ax = lerp_axis(wo, os.w, x.shape.w);
                const double v00 = static_cast<double>(src[ay.i0 * x.shape.w + ax.i0]);
                const double v01 = static_cast<double>(src[ay.i0 * x.shape.w + ax.i1]);
                const double v10 = static_cast<double>(src[ay.i1 * x.shape.w + ax.i0]);
                const double v11 = static_cast<double>(src[ay.i1 * x.shape.w + ax.i1]);
                // lerp form keeps constants exact
                const double top = v00 + ax.frac * (v01 - v00);
                const double bot = v10 + ax.frac * (v11 - v10);
                dst[ho * os.w + wo] = static_cast<T>(top + ay.frac * (bot - top));
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> upsample_bilinear_spatial_backward(const Tensor<T>& grad_out, const Shape5& input_shape) {
    Tensor<T> grad_x(input_shape);
    const Shape5& os = grad_out.shape;
    if (os.n != input_shape.n || os.c != input_shape.c || os.t != input_shape.t)
        throw ShapeError("upsample_bilinear_spatial_backward: n/c/t mismatch");
    const std::int64_t frames = os.n * os.c * os.t;
#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < frames; ++f) {
        const T* gsrc = &grad_out.data[static_cast<std::size_t>(f * os.h * os.w)];
        T* gdst = &grad_x.data[static_cast<std::size_t>(f * input_shape.h * input_shape.w)];
        for (std::int64_t ho = 0; ho < os.h; ++ho) {
            const LerpAxis ay = lerp_axis(ho, os.h, input_shape.h);
            for (std::int64_t wo = 0; wo < os.w; ++wo) {
                const LerpAxis ax = lerp_axis(wo, os.w, input_shape.w);
                const double gv = static_cast<double>(gsrc[ho * os.w + wo]);
                gdst[ay.i0 * input_shape.w + ax.i0] += static_cast<T>(gv * (1.0 - ay.frac) * (1.0 - ax.frac));
                gdst[ay.i0 * input_shape.w + ax.i1] += static_cast<T>(gv * (1.0 - ay.frac) * ax.frac);
                gdst[ay.i1 * input_shape.w + ax.i0] += static_cast<T>(gv * ay.frac * (1.0 - ax.frac));
                gdst[ay.i1 * input_shape.w + ax.i1] += static_cast<T>(gv * ay.frac * ax.frac);
            }
        }
    }
    return grad_x;
}

namespace {

// Source frame for output frame j: pad the tail until doubling covers t_out,
// duplicate each frame, crop. Collapses to src = min(j / 2, t_in - 1).
std::int64_t temporal_src(std::int64_t j, std::int64_t t_in) {
    const std::int64_t p = j / 2;
    return p < t_in ? p : t_in - 1;
}

} // namespace

template <typename T>
Tensor<T> upsample_temporal(const Tensor<T>& x, std::int64_t t_out) {
    if (t_out < x.shape.t)
        throw ShapeError("upsample_temporal: t_out " + std::to_string(t_out) + " < input t " +
                         std::to_string(x.shape.t));
    if (t_out == x.shape.t) return x;
    Shape5 os = x.shape;
    os.t = t_out;
    Tensor<T> out(os);
    const std::int64_t frame = os.h * os.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t c = 0; c < os.c; ++c) {
            for (std::int64_t j = 0; j < t_out; ++j) {
                const std::int64_t src_t = temporal_src(j, x.shape.t);
                std::copy_n(&x.data[x.index(n, c, src_t, 0, 0)], frame, &out.data[out.index(n, c, j, 0, 0)]);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> upsample_temporal_backward(const Tensor<T>& grad_out, std::int64_t t_in) {
    Shape5 is = grad_out.shape;
    is.t = t_in;
    if (grad_out.shape.t < t_in) throw ShapeError("upsample_temporal_backward: grad has fewer frames than input");
    if (grad_out.shape.t == t_in) return grad_out;
    Tensor<T> grad_x(is);
    const std::int64_t frame = is.h * is.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < is.n; ++n) {
        for (std::int64_t c = 0; c < is.c; ++c) {
            for (std::int64_t j = 0; j < grad_out.shape.t; ++j) {
                const std::int64_t src_t = temporal_src(j, t_in);
                const T* g = &grad_out.data[grad_out.index(n, c, j, 0, 0)];
                T* dst = &grad_x.data[grad_x.index(n, c, src_t, 0, 0)];
                for (std::int64_t i = 0; i < frame; ++i) dst[i] += g[i];
            }
        }
    }
    return grad_x;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::int64_t channels) {
    BatchNormState<T> s;
    s.gamma.assign(static_cast<std::size_t>(channels), T(1));
    s.beta.assign(static_cast<std::size_t>(channels), T(0));
    s.running_mean.assign(static_cast<std::size_t>(channels), T(0));
    s.running_var.assign(static_cast<std::size_t>(channels), T(1));
    return s;
}

template <typename T>
BatchNormResult<T> batchnorm3d(const Tensor<T>& x, const BatchNormState<T>& s, Mode mode) {
    const Shape5& xs = x.shape;
    const auto C = static_cast<std::size_t>(xs.c);
    if (s.gamma.size() != C || s.beta.size() != C || s.running_mean.size() != C || s.running_var.size() != C)
        throw ShapeError("batchnorm3d: per-channel vectors must have length " + std::to_string(xs.c));
    if (s.epsilon <= T(0)) throw NumericError("batchnorm3d: epsilon must be > 0");
    const std::int64_t per_channel = xs.n * xs.t * xs.h * xs.w;
    if (mode == Mode::train && per_channel < 2)
        throw NumericError("batchnorm3d: degenerate batch, need >= 2 elements per channel in train mode");

    BatchNormResult<T> res;
    res.cache.mode = mode;
    res.cache.xhat = Tensor<T>(xs);
    res.cache.inv_std.assign(C, T(0));
    res.out = Tensor<T>(xs);

    if (mode == Mode::train) {
        res.cache.batch_mean.assign(C, T(0));
        res.cache.batch_var.assign(C, T(0));
    }

    // the (t, h, w) block of one (n, c) pair is contiguous
    const std::int64_t block = xs.t * xs.h * xs.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < xs.c; ++c) {
        T mean, var;
        if (mode == Mode::train) {
            T sum = T(0);
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const T* px = &x.data[x.index(n, c, 0, 0, 0)];
                for (std::int64_t i = 0; i < block; ++i) sum += px[i];
            }
            mean = sum / static_cast<T>(per_channel);
            T sq = T(0);
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const T* px = &x.data[x.index(n, c, 0, 0, 0)];
                for (std::int64_t i = 0; i < block; ++i) {
                    const T d = px[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<T>(per_channel); // biased
            res.cache.batch_mean[static_cast<std::size_t>(c)] = mean;
            res.cache.batch_var[static_cast<std::size_t>(c)] = var;
        } else {
            mean = s.running_mean[static_cast<std::size_t>(c)];
            var = s.running_var[static_cast<std::size_t>(c)];
        }
        const T inv_std = T(1) / std::sqrt(var + s.epsilon);
        res.cache.inv_std[static_cast<std::size_t>(c)] = inv_std;
        const T gamma = s.gamma[static_cast<std::size_t>(c)];
        const T beta = s.beta[static_cast<std::size_t>(c)];
        for (std::int64_t n = 0; n < xs.n; ++n) {
            const std::size_t base = x.index(n, c, 0, 0, 0);
            const T* px = &x.data[base];
            T* pxhat = &res.cache.xhat.data[base];
            T* pout = &res.out.data[base];
            for (std::int64_t i = 0; i < block; ++i) {
                const T xhat = (px[i] - mean) * inv_std;
                pxhat[i] = xhat;
                pout[i] = gamma * xhat + beta;
            }
        }
    }
    return res;
}

template <typename T>
void batchnorm_update_running(BatchNormState<T>& s, const BatchNormCache<T>& cache) {
    if (cache.mode != Mode::train || cache.batch_mean.size() != s.running_mean.size())
        throw CorruptionError("batchnorm_update_running: cache is not a matching train-mode cache");
    for (std::size_t c = 0; c < s.running_mean.size(); ++c) {
        s.running_mean[c] = s.momentum * s.running_mean[c] + (T(1) - s.momentum) * cache.batch_mean[c];
        s.running_var[c] = s.momentum * s.running_var[c] + (T(1) - s.momentum) * cache.batch_var[c];
    }
}

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const BatchNormCache<T>& cache, const std::vector<T>& gamma,
                                       const Tensor<T>& grad_out) {
    const Shape5& xs = cache.xhat.shape;
    if (!(grad_out.shape == xs)) throw ShapeError("batchnorm3d_backward: grad_out shape mismatch");
    const std::int64_t per_channel = xs.n * xs.t * xs.h * xs.w;
    BatchNormGrads<T> g;
    g.grad_x = Tensor<T>(xs);
    g.grad_gamma.assign(gamma.size(), T(0));
    g.grad_beta.assign(gamma.size(), T(0));

    const std::int64_t block = xs.t * xs.h * xs.w;
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < xs.c; ++c) {
        T s1 = T(0), s2 = T(0);
        for (std::int64_t n = 0; n < xs.n; ++n) {
            const std::size_t base = cache.xhat.index(n, c, 0, 0, 0);
            const T* pg = &grad_out.data[base];
            const T* ph = &cache.xhat.data[base];
            for (std::int64_t i = 0; i < block; ++i) {
                s1 += pg[i];
                s2 += pg[i] * ph[i];
            }
        }
        g.grad_beta[static_cast<std::size_t>(c)] = s1;
        g.grad_gamma[static_cast<std::size_t>(c)] = s2;
        const T inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        const T gam = gamma[static_cast<std::size_t>(c)];
        const T m = static_cast<T>(per_channel);
        for (std::int64_t n = 0; n < xs.n; ++n) {
            const std::size_t base = cache.xhat.index(n, c, 0, 0, 0);
            const T* pg = &grad_out.data[base];
            const T* ph = &cache.xhat.data[base];
            T* px = &g.grad_x.data[base];
            if (cache.mode == Mode::train) {
                for (std::int64_t i = 0; i < block; ++i)
                    px[i] = gam * inv_std * (pg[i] - s1 / m - ph[i] * s2 / m);
            } else {
                for (std::int64_t i = 0; i < block; ++i) px[i] = gam * inv_std * pg[i];
            }
        }
    }
    return g;
}

template <typename T>
DropoutResult<T> dropout3d(const Tensor<T>& x, double rate, std::uint64_t seed, Mode mode) {
    if (rate < 0.0 || rate >= 1.0) throw ArgumentError("dropout3d: rate must be in [0, 1)");
    DropoutResult<T> res{Tensor<T>(x.shape), Tensor<T>(x.shape)};
    if (mode == Mode::eval || rate == 0.0) {
        res.out = x;
        for (auto& m : res.mask.data) m = T(1);
        return res;
    }
    const CounterRng rng(seed, "dropout");
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    const std::int64_t total = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        const bool keep = rng.uniform(static_cast<std::uint64_t>(i)) >= rate;
        const T m = keep ? scale : T(0);
        res.mask.data[static_cast<std::size_t>(i)] = m;
        res.out.data[static_cast<std::size_t>(i)] = x.data[static_cast<std::size_t>(i)] * m;
    }
    return res;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
    Tensor<T> out(x.shape);
    const std::int64_t total = x.numel();
    switch (kind) {
        case Act::relu:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i)
                out.data[static_cast<std::size_t>(i)] = std::max(x.data[static_cast<std::size_t>(i)], T(0));
            return out;
        case Act::sigmoid:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i)
                out.data[static_cast<std::size_t>(i)] = T(1) / (T(1) + std::exp(-x.data[static_cast<std::size_t>(i)]));
            return out;
        case Act::tanh:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i)
                out.data[static_cast<std::size_t>(i)] = std::tanh(x.data[static_cast<std::size_t>(i)]);
            return out;
        case Act::softmax_over_channels: {
            const Shape5& xs = x.shape;
            const std::int64_t positions = xs.n * xs.t * xs.h * xs.w;
            const std::int64_t cstride = xs.t * xs.h * xs.w;
#pragma omp parallel for schedule(static)
            for (std::int64_t pidx = 0; pidx < positions; ++pidx) {
                const std::int64_t n = pidx / (xs.t * xs.h * xs.w);
                const std::int64_t off = pidx % (xs.t * xs.h * xs.w);
                const std::size_t base = static_cast<std::size_t>(n * xs.c * cstride + off);
                T mx = x.data[base];
                for (std::int64_t c = 1; c < xs.c; ++c)
                    mx = std::max(mx, x.data[base + static_cast<std::size_t>(c * cstride)]);
                T denom = T(0);
                for (std::int64_t c = 0; c < xs.c; ++c) {
                    const T e = std::exp(x.data[base + static_cast<std::size_t>(c * cstride)] - mx);
                    out.data[base + static_cast<std::size_t>(c * cstride)] = e;
                    denom += e;
                }
                for (std::int64_t c = 0; c < xs.c; ++c)
                    out.data[base + static_cast<std::size_t>(c * cstride)] /= denom;
            }
            return out;
        }
    }
    throw ArgumentError("activation: unknown kind");
}

template <typename T>
Tensor<T> activation_backward(Act kind, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& grad_out) {
    if (!(grad_out.shape == y.shape)) throw ShapeError("activation_backward: grad_out shape mismatch");
    Tensor<T> g(y.shape);
    const std::int64_t total = y.numel();
    switch (kind) {
        case Act::relu:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i) {
                const auto u = static_cast<std::size_t>(i);
                g.data[u] = x.data[u] > T(0) ? grad_out.data[u] : T(0);
            }
            return g;
        case Act::sigmoid:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i) {
                const auto u = static_cast<std::size_t>(i);
                g.data[u] = grad_out.data[u] * y.data[u] * (T(1) - y.data[u]);
            }
            return g;
        case Act::tanh:
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i) {
                const auto u = static_cast<std::size_t>(i);
                g.data[u] = grad_out.data[u] * (T(1) - y.data[u] * y.data[u]);
            }
            return g;
        case Act::softmax_over_channels: {
            const Shape5& xs = y.shape;
            const std::int64_t positions = xs.n * xs.t * xs.h * xs.w;
            const std::int64_t cstride = xs.t * xs.h * xs.w;
#pragma omp parallel for schedule(static)
            for (std::int64_t pidx = 0; pidx < positions; ++pidx) {
                const std::int64_t n = pidx / (xs.t * xs.h * xs.w);
                const std::int64_t off = pidx % (xs.t * xs.h * xs.w);
                const std::size_t base = static_cast<std::size_t>(n * xs.c * cstride + off);
                T dot = T(0);
                for (std::int64_t c = 0; c < xs.c; ++c) {
                    const std::size_t i = base + static_cast<std::size_t>(c * cstride);
                    dot += grad_out.data[i] * y.data[i];
                }
                for (std::int64_t c = 0; c < xs.c; ++c) {
                    const std::size_t i = base + static_cast<std::size_t>(c * cstride);
                    g.data[i] = y.data[i] * (grad_out.data[i] - dot);
                }
            }
            return g;
        }
    }
    throw ArgumentError("activation_backward: unknown kind");
}

#define FPA3D_INSTANTIATE(T)                                                                               \
    template struct Conv3dParams<T>;                                                                      \
    template Shape5 conv3d_out_shape(const Shape5&, const Conv3dParams<T>&);                              \
    template Tensor<T> conv3d(const Tensor<T>&, const Conv3dParams<T>&);                                  \
    template Conv3dGrads<T> conv3d_backward(const Tensor<T>&, const Conv3dParams<T>&, const Tensor<T>&);  \
    template PoolResult<T> maxpool3d(const Tensor<T>&, std::array<std::int64_t, 3>,                       \
                                     std::array<std::int64_t, 3>);                                        \
    template Tensor<T> maxpool3d_backward(const std::vector<std::int64_t>&, const Tensor<T>&,             \
                                          const Shape5&);                                                 \
    template Tensor<T> upsample_bilinear_spatial(const Tensor<T>&, std::int64_t, std::int64_t);           \
    template Tensor<T> upsample_bilinear_spatial_backward(const Tensor<T>&, const Shape5&);               \
    template Tensor<T> upsample_temporal(const Tensor<T>&, std::int64_t);                                 \
    template Tensor<T> upsample_temporal_backward(const Tensor<T>&, std::int64_t);                        \
    template struct BatchNormState<T>;                                                                    \
    template BatchNormResult<T> batchnorm3d(const Tensor<T>&, const BatchNormState<T>&, Mode);            \
    template void batchnorm_update_running(BatchNormState<T>&, const BatchNormCache<T>&);                 \
    template BatchNormGrads<T> batchnorm3d_backward(const BatchNormCache<T>&, const std::vector<T>&,      \
                                                    const Tensor<T>&);                                    \
    template DropoutResult<T> dropout3d(const Tensor<T>&, double, std::uint64_t, Mode);                   \
    template Tensor<T> activation(const Tensor<T>&, Act);                                                 \
    template Tensor<T> activation_backward(Act, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

FPA3D_INSTANTIATE(float)
FPA3D_INSTANTIATE(double)

#undef FPA3D_INSTANTIATE

} // namespace fpa3d
