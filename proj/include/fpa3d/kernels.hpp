// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fpa3d/tensor.hpp"

namespace fpa3d {

enum class Mode { train, eval };

// Cross-correlation (no kernel flip) with zero padding. Per-output-element
// accumulation order is fixed to k_t, k_h, k_w, c_in so results are
// bit-identical for any thread count.
template <typename T>
struct Conv3dParams {
    std::int64_t c_out = 1, c_in = 1, kt = 1, kh = 1, kw = 1;
    std::vector<T> weights; // (c_out, c_in, kt, kh, kw) row-major
    std::vector<T> bias;    // c_out
    std::array<std::int64_t, 3> stride{1, 1, 1}; // (t, h, w)
    std::array<std::int64_t, 3> pad{0, 0, 0};    // zero padding per axis

    std::size_t widx(std::int64_t co, std::int64_t ci, std::int64_t t, std::int64_t h, std::int64_t w) const {
        return static_cast<std::size_t>((((co * c_in + ci) * kt + t) * kh + h) * kw + w);
    }
    void validate() const;
};

template <typename T>
Shape5 conv3d_out_shape(const Shape5& x, const Conv3dParams<T>& p);

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p);

template <typename T>
struct Conv3dGrads {
    Tensor<T> grad_x;
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out);

// Max pooling; argmax holds the flat index into the input buffer of the
// winning element (first occurrence in (t, h, w) scan order on ties).
template <typename T>
struct PoolResult {
    Tensor<T> out;
    std::vector<std::int64_t> argmax;
};

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::array<std::int64_t, 3> window,
                        std::array<std::int64_t, 3> stride);

template <typename T>
Tensor<T> maxpool3d_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& grad_out,
                             const Shape5& input_shape);

// Per-frame bilinear resize, align-corners convention:
// src = dst * (src_len - 1) / (dst_len - 1); single-pixel axes map to 0.
template <typename T>
Tensor<T> upsample_bilinear_spatial(const Tensor<T>& x, std::int64_t h_out, std::int64_t w_out);

template <typename T>
Tensor<T> upsample_bilinear_spatial_backward(const Tensor<T>& grad_out, const Shape5& input_shape);

// Temporal enlargement: replicate-pad the tail until doubling reaches t_out,
// duplicate every frame, crop. t_out == x.t is the identity.
template <typename T>
Tensor<T> upsample_temporal(const Tensor<T>& x, std::int64_t t_out);

template <typename T>
Tensor<T> upsample_temporal_backward(const Tensor<T>& grad_out, std::int64_t t_in);

template <typename T>
struct BatchNormState {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    T momentum = T(0.9);
    T epsilon = T(1e-5);

    static BatchNormState identity(std::int64_t channels);
};

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;    // per channel, from batch stats (train) or running stats (eval)
    std::vector<T> batch_mean; // train only
    std::vector<T> batch_var;  // biased, train only
    Mode mode = Mode::train;
};

template <typename T>
struct BatchNormResult {
    Tensor<T> out;
    BatchNormCache<T> cache;
};

// Pure: never mutates the state. Training-mode running-stat updates are
// applied by the caller via batchnorm_update_running, in a fixed order.
template <typename T>
BatchNormResult<T> batchnorm3d(const Tensor<T>& x, const BatchNormState<T>& s, Mode mode);

template <typename T>
void batchnorm_update_running(BatchNormState<T>& s, const BatchNormCache<T>& cache);

template <typename T>
struct BatchNormGrads {
    Tensor<T> grad_x;
    std::vector<T> grad_gamma;
    std::vector<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const BatchNormCache<T>& cache, const std::vector<T>& gamma,
                                       const Tensor<T>& grad_out);

// Inverted dropout. The mask stores 0 or 1/(1-rate), so backward is a
// pointwise multiply by the mask. Mask depends only on (seed, element index).
template <typename T>
struct DropoutResult {
    Tensor<T> out;
    Tensor<T> mask;
};

template <typename T>
DropoutResult<T> dropout3d(const Tensor<T>& x, double rate, std::uint64_t seed, Mode mode);

enum class Act { relu, sigmoid, tanh, softmax_over_channels };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind);

// x is the forward input, y the forward output; relu reads x, the others y.
template <typename T>
Tensor<T> activation_backward(Act kind, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& grad_out);

} // namespace fpa3d
