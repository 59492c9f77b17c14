// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/gru.hpp"

#include <cmath>

#include "fpa3d/rng.hpp"

namespace fpa3d {

namespace {

template <typename T>
Mat<T> uniform_mat(std::int64_t rows, std::int64_t cols, std::uint64_t seed, const std::string& stream) {
    Mat<T> m(rows, cols);
    const CounterRng rng(seed, stream);
    const double bound = std::sqrt(1.0 / static_cast<double>(cols));
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<T>(rng.uniform(i, -bound, bound));
    return m;
}

template <typename T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

// One direction over the sequence in processing order: step i reads row
// order[i] of the input.
template <typename T>
void run_direction(const Mat<T>& seq, const GruDirParams<T>& p, bool reversed, GruDirCache<T>& cache) {
    const std::int64_t t_len = seq.rows;
    const std::int64_t hidden = p.uz.rows;
    cache.h = Mat<T>(t_len + 1, hidden);
    cache.z = Mat<T>(t_len, hidden);
    cache.r = Mat<T>(t_len, hidden);
    cache.c = Mat<T>(t_len, hidden);
    std::vector<T> az(hidden), ar(hidden), ac(hidden), rh(hidden), tmp(hidden);
    for (std::int64_t i = 0; i < t_len; ++i) {
        const std::int64_t src = reversed ? t_len - 1 - i : i;
        const T* x = seq.row(src);
        const T* h_prev = cache.h.row(i);
        matvec(p.wz, x, az.data());
        matvec(p.uz, h_prev, tmp.data());
        for (std::int64_t k = 0; k < hidden; ++k) az[k] = sigmoid(az[k] + tmp[k] + p.bz[static_cast<std::size_t>(k)]);
        matvec(p.wr, x, ar.data());
        matvec(p.ur, h_prev, tmp.data());
        for (std::int64_t k = 0; k < hidden; ++k) ar[k] = sigmoid(ar[k] + tmp[k] + p.br[static_cast<std::size_t>(k)]);
        for (std::int64_t k = 0; k < hidden; ++k) rh[k] = ar[k] * h_prev[k];
        matvec(p.wh, x, ac.data());
        matvec(p.uh, rh.data(), tmp.data());
        for (std::int64_t k = 0; k < hidden; ++k)
            ac[k] = std::tanh(ac[k] + tmp[k] + p.bh[static_cast<std::size_t>(k)]);
        T* h = cache.h.row(i + 1);
        for (std::int64_t k = 0; k < hidden; ++k) {
            cache.z.at(i, k) = az[k];
            cache.r.at(i, k) = ar[k];
            cache.c.at(i, k) = ac[k];
            h[k] = (T(1) - az[k]) * h_prev[k] + az[k] * ac[k];
        }
    }
}

template <typename T>
GruDirParams<T> zero_like(const GruDirParams<T>& p) {
    GruDirParams<T> g;
    g.wz = Mat<T>(p.wz.rows, p.wz.cols);
    g.wr = Mat<T>(p.wr.rows, p.wr.cols);
    g.wh = Mat<T>(p.wh.rows, p.wh.cols);
    g.uz = Mat<T>(p.uz.rows, p.uz.cols);
    g.ur = Mat<T>(p.ur.rows, p.ur.cols);
    g.uh = Mat<T>(p.uh.rows, p.uh.cols);
    g.bz.assign(p.bz.size(), T(0));
    g.br.assign(p.br.size(), T(0));
    g.bh.assign(p.bh.size(), T(0));
    return g;
}

// Backward through time for one direction. grad_h_rows[i] is the gradient on
// the emitted hidden state of processing step i.
template <typename T>
void direction_backward(const Mat<T>& seq, const GruDirParams<T>& p, const GruDirCache<T>& cache,
                        bool reversed, const Mat<T>& grad_h_rows, GruDirParams<T>& grads, Mat<T>& grad_seq) {
    const std::int64_t t_len = seq.rows;
    const std::int64_t hidden = p.uz.rows;
    std::vector<T> dh(hidden, T(0)), daz(hidden), dar(hidden), dac(hidden), drh(hidden), dx(seq.cols);
    for (std::int64_t i = t_len - 1; i >= 0; --i) {
        const std::int64_t src = reversed ? t_len - 1 - i : i;
        const T* h_prev = cache.h.row(i);
        for (std::int64_t k = 0; k < hidden; ++k) dh[k] += grad_h_rows.at(i, k);

        std::vector<T> dh_prev(hidden, T(0));
        for (std::int64_t k = 0; k < hidden; ++k) {
            const T z = cache.z.at(i, k), c = cache.c.at(i, k);
            const T dz = dh[k] * (c - h_prev[k]);
            const T dc = dh[k] * z;
            dh_prev[k] += dh[k] * (T(1) - z);
            dac[k] = dc * (T(1) - c * c);
            daz[k] = dz * z * (T(1) - z);
        }
        // candidate path: Uh acts on r * h_prev
        std::fill(drh.begin(), drh.end(), T(0));
        matvec_transpose_acc(p.uh, dac.data(), drh.data());
        for (std::int64_t k = 0; k < hidden; ++k) {
            const T r = cache.r.at(i, k);
            const T dr = drh[k] * h_prev[k];
            dh_prev[k] += drh[k] * r;
            dar[k] = dr * r * (T(1) - r);
        }

        const T* x = seq.row(src);
        std::vector<T> rh(hidden);
        for (std::int64_t k = 0; k < hidden; ++k) rh[k] = cache.r.at(i, k) * h_prev[k];
        outer_acc(grads.wz, daz.data(), x);
        outer_acc(grads.wr, dar.data(), x);
        outer_acc(grads.wh, dac.data(), x);
        outer_acc(grads.uz, daz.data(), h_prev);
        outer_acc(grads.ur, dar.data(), h_prev);
        outer_acc(grads.uh, dac.data(), rh.data());
        for (std::int64_t k = 0; k < hidden; ++k) {
            grads.bz[static_cast<std::size_t>(k)] += daz[k];
            grads.br[static_cast<std::size_t>(k)] += dar[k];
            grads.bh[static_cast<std::size_t>(k)] += dac[k];
        }

        std::fill(dx.begin(), dx.end(), T(0));
        matvec_transpose_acc(p.wz, daz.data(), dx.data());
        matvec_transpose_acc(p.wr, dar.data(), dx.data());
        matvec_transpose_acc(p.wh, dac.data(), dx.data());
        for (std::int64_t k = 0; k < seq.cols; ++k) grad_seq.at(src, k) += dx[k];

        matvec_transpose_acc(p.uz, daz.data(), dh_prev.data());
        matvec_transpose_acc(p.ur, dar.data(), dh_prev.data());
        dh = std::move(dh_prev);
    }
}

} // namespace

template <typename T>
BiGruParams<T> bigru_build(std::int64_t input, std::int64_t hidden, std::uint64_t seed,
                           const std::string& stream) {
    BiGruParams<T> p;
    p.input = input;
    p.hidden = hidden;
    for (const char* dir : {"fwd", "bwd"}) {
        GruDirParams<T>& d = dir[0] == 'f' ? p.fwd : p.bwd;
        const std::string base = stream + "." + dir + ".";
        d.wz = uniform_mat<T>(hidden, input, seed, base + "wz");
        d.wr = uniform_mat<T>(hidden, input, seed, base + "wr");
        d.wh = uniform_mat<T>(hidden, input, seed, base + "wh");
        d.uz = uniform_mat<T>(hidden, hidden, seed, base + "uz");
        d.ur = uniform_mat<T>(hidden, hidden, seed, base + "ur");
        d.uh = uniform_mat<T>(hidden, hidden, seed, base + "uh");
        d.bz.assign(static_cast<std::size_t>(hidden), T(0));
        d.br.assign(static_cast<std::size_t>(hidden), T(0));
        d.bh.assign(static_cast<std::size_t>(hidden), T(0));
    }
    return p;
}

template <typename T>
BiGruResult<T> bigru_forward(const Mat<T>& seq, const BiGruParams<T>& p) {
    if (seq.cols != p.input)
        throw ShapeError("bigru_forward: input width " + std::to_string(seq.cols) + " does not match layer input " +
                         std::to_string(p.input));
    BiGruResult<T> res;
    res.cache.input = seq;
    run_direction(seq, p.fwd, false, res.cache.fwd);
    run_direction(seq, p.bwd, true, res.cache.bwd);
    const std::int64_t t_len = seq.rows;
    res.out = Mat<T>(t_len, 2 * p.hidden);
    for (std::int64_t t = 0; t < t_len; ++t) {
        for (std::int64_t k = 0; k < p.hidden; ++k) {
            res.out.at(t, k) = res.cache.fwd.h.at(t + 1, k);
            // backward direction processed step (t_len - 1 - t) at source row t
            res.out.at(t, p.hidden + k) = res.cache.bwd.h.at(t_len - t, k);
        }
    }
    res.cache.valid = true;
    return res;
}

template <typename T>
BiGruBackwardResult<T> bigru_backward(const BiGruParams<T>& p, const BiGruCache<T>& cache,
                                      const Mat<T>& grad_out) {
    if (!cache.valid) throw CorruptionError("bigru_backward: stale cache");
    const std::int64_t t_len = cache.input.rows;
    if (grad_out.rows != t_len || grad_out.cols != 2 * p.hidden)
        throw ShapeError("bigru_backward: grad_out shape mismatch");

    BiGruBackwardResult<T> res;
    res.grads.fwd = zero_like(p.fwd);
    res.grads.bwd = zero_like(p.bwd);
    res.grad_seq = Mat<T>(t_len, cache.input.cols);

    Mat<T> gf(t_len, p.hidden), gb(t_len, p.hidden);
    for (std::int64_t t = 0; t < t_len; ++t)
        for (std::int64_t k = 0; k < p.hidden; ++k) {
            gf.at(t, k) = grad_out.at(t, k);
            gb.at(t_len - 1 - t, k) = grad_out.at(t, p.hidden + k); // map source row to processing step
        }
    direction_backward(cache.input, p.fwd, cache.fwd, false, gf, res.grads.fwd, res.grad_seq);
    direction_backward(cache.input, p.bwd, cache.bwd, true, gb, res.grads.bwd, res.grad_seq);
    return res;
}

#define FPA3D_GRU_INSTANTIATE(T)                                                                     \
    template BiGruParams<T> bigru_build(std::int64_t, std::int64_t, std::uint64_t, const std::string&); \
    template BiGruResult<T> bigru_forward(const Mat<T>&, const BiGruParams<T>&);                     \
    template BiGruBackwardResult<T> bigru_backward(const BiGruParams<T>&, const BiGruCache<T>&,      \
                                                   const Mat<T>&);

FPA3D_GRU_INSTANTIATE(float)
FPA3D_GRU_INSTANTIATE(double)

#undef FPA3D_GRU_INSTANTIATE

} // namespace fpa3d
