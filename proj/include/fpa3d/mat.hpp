// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fpa3d/errors.hpp"

namespace fpa3d {

// Minimal row-major matrix for sequence-level work (GRU states, logits).
template <typename T>
struct Mat {
    std::int64_t rows = 0, cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), T(0)) {}

    T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
    const T& at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }

    T* row(std::int64_t r) { return &data[static_cast<std::size_t>(r * cols)]; }
    const T* row(std::int64_t r) const { return &data[static_cast<std::size_t>(r * cols)]; }
};

// y = W x (W is rows x cols, x has cols entries); serial fixed-order dots.
template <typename T>
void matvec(const Mat<T>& w, const T* x, T* y) {
    for (std::int64_t r = 0; r < w.rows; ++r) {
        T acc = T(0);
        const T* wr = w.row(r);
        for (std::int64_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

// y += W^T g
template <typename T>
void matvec_transpose_acc(const Mat<T>& w, const T* g, T* y) {
    for (std::int64_t r = 0; r < w.rows; ++r) {
        const T* wr = w.row(r);
        const T gv = g[r];
        for (std::int64_t c = 0; c < w.cols; ++c) y[c] += wr[c] * gv;
    }
}

// W += g x^T (outer product accumulation)
template <typename T>
void outer_acc(Mat<T>& w, const T* g, const T* x) {
    for (std::int64_t r = 0; r < w.rows; ++r) {
        T* wr = w.row(r);
        const T gv = g[r];
        for (std::int64_t c = 0; c < w.cols; ++c) wr[c] += gv * x[c];
    }
}

} // namespace fpa3d
