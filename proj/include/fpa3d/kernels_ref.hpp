// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fpa3d/kernels.hpp"

namespace fpa3d::ref {

// Single-threaded baseline implementations of the hot kernels. They use the
// same per-element accumulation order as the parallel versions, so outputs
// must match bit for bit; the parity tests and the bench subcommand rely on
// that.

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& p);

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3dParams<T>& p, const Tensor<T>& grad_out);

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& x, std::array<std::int64_t, 3> window,
                        std::array<std::int64_t, 3> stride);

template <typename T>
Tensor<T> upsample_bilinear_spatial(const Tensor<T>& x, std::int64_t h_out, std::int64_t w_out);

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);

} // namespace fpa3d::ref
