// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fpa3d/kernels.hpp"

namespace fpa3d {

enum class FpaVariant { spatial_2d, spatiotemporal_3d };
enum class MaskActivation { sigmoid, identity };

struct FpaConfig {
    FpaVariant variant = FpaVariant::spatiotemporal_3d;
    int levels = 3;
    MaskActivation mask_activation = MaskActivation::sigmoid;
    bool use_batchnorm = true;
    bool use_dropout = true;
    double dropout_rate = 0.3;
};

// One pyramid level: a strided bottom-up conv and a stride-1 fusion conv,
// each with its own norm state. All convs preserve the channel count, so the
// final mask has the input's shape and no output projection is needed.
template <typename T>
struct FpaLevel {
    Conv3dParams<T> down;
    BatchNormState<T> down_bn;
    Conv3dParams<T> fuse;
    BatchNormState<T> fuse_bn;
};

template <typename T>
struct FpaModule {
    FpaConfig config;
    std::int64_t channels = 1;
    std::vector<FpaLevel<T>> levels;
};

// Weights uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)] from the seed,
// biases zero. Same seed gives a bit-identical module.
template <typename T>
FpaModule<T> fpa_build(const FpaConfig& config, std::int64_t channels, std::uint64_t init_seed);

// Per-level extents of the bottom-up pathway for a given input shape.
std::vector<Shape5> fpa_level_shapes(const FpaConfig& config, const Shape5& x);

template <typename T>
struct FpaLevelCache {
    Tensor<T> in;        // input to the down conv
    BatchNormCache<T> down_bn;
    Tensor<T> relu_out;
    Tensor<T> down_drop_mask;
    Tensor<T> level_out; // L_i, input to the fusion conv and the next level
    BatchNormCache<T> fuse_bn;
    Tensor<T> fuse_drop_mask;
};

template <typename T>
struct FpaCache {
    Tensor<T> x;
    Tensor<T> mask;
    std::vector<FpaLevelCache<T>> levels;
    Mode mode = Mode::eval;
    bool valid = false;
};

template <typename T>
struct FpaForwardResult {
    Tensor<T> out;
    FpaCache<T> cache;
};

// Bottom-up strided convs, top-down fusion with lateral additions, then a
// pixel-level mask multiplied with the input. Output shape equals input
// shape. Pure with respect to the module; running-stat updates are applied
// separately via fpa_update_running.
template <typename T>
FpaForwardResult<T> fpa_forward(const FpaModule<T>& m, const Tensor<T>& x, Mode mode,
                                std::uint64_t dropout_seed = 0);

template <typename T>
void fpa_update_running(FpaModule<T>& m, const FpaCache<T>& cache);

template <typename T>
struct FpaLevelGrads {
    std::vector<T> down_w, down_b, down_gamma, down_beta;
    std::vector<T> fuse_w, fuse_b, fuse_gamma, fuse_beta;
};

template <typename T>
struct FpaGrads {
    std::vector<FpaLevelGrads<T>> levels;
};

template <typename T>
struct FpaBackwardResult {
    Tensor<T> grad_x;
    FpaGrads<T> grads;
};

template <typename T>
FpaBackwardResult<T> fpa_backward(const FpaModule<T>& m, const FpaCache<T>& cache, const Tensor<T>& grad_out);

} // namespace fpa3d
