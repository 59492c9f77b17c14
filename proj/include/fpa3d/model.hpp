// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpa3d/fpa.hpp"
#include "fpa3d/gru.hpp"
#include "fpa3d/kernels.hpp"
#include "fpa3d/mat.hpp"

namespace fpa3d {

enum class FpaPosition { input, f1, f2 };

std::string fpa_position_name(FpaPosition p);

struct LipNetConfig {
    std::int64_t in_c = 1, t = 24, h = 32, w = 32;
    std::array<std::int64_t, 3> channels{8, 16, 24};
    // (k_t, k_h, k_w) per block; k_t must be odd so padding preserves t.
    std::array<std::array<std::int64_t, 3>, 3> kernels{{{3, 5, 5}, {3, 5, 5}, {3, 5, 5}}};
    std::int64_t hidden = 64;
    std::int64_t num_classes = 28;
    double dropout = 0.3;
    std::vector<std::pair<FpaPosition, FpaVariant>> fpa_positions;
    FpaConfig fpa; // shared FPA knobs; variant comes from fpa_positions

    void validate() const;
};

template <typename T>
struct StcnnBlock {
    Conv3dParams<T> conv;
    BatchNormState<T> bn;
};

template <typename T>
struct ModelParams {
    LipNetConfig config;
    std::array<StcnnBlock<T>, 3> blocks;
    BiGruParams<T> gru1, gru2;
    Mat<T> out_w; // num_classes x 2*hidden
    std::vector<T> out_b;
    std::optional<FpaModule<T>> fpa_input, fpa_f1, fpa_f2;
};

template <typename T>
ModelParams<T> init_model(const LipNetConfig& config, std::uint64_t seed);

// Zeroed clone with the same structure, used as a gradient container.
template <typename T>
ModelParams<T> grads_like(const ModelParams<T>& p);

// Flat named view over every tensor in the model, in a fixed order shared by
// Adam state and checkpoints.
template <typename T>
struct TensorView {
    std::string name;
    std::vector<T>* flat = nullptr;
    std::vector<std::uint32_t> dims;
    bool learnable = true;
};

template <typename T>
std::vector<TensorView<T>> tensor_views(ModelParams<T>& p);

// ---- STCNN block: conv -> batchnorm -> relu -> dropout -> spatial maxpool.

template <typename T>
struct BlockCache {
    Tensor<T> in;
    BatchNormCache<T> bn;
    Tensor<T> relu_out;
    Tensor<T> drop_mask;
    Shape5 prepool_shape;
    std::vector<std::int64_t> pool_argmax;
    std::array<std::int64_t, 3> pool_window{1, 2, 2};
};

template <typename T>
struct BlockResult {
    Tensor<T> out;
    BlockCache<T> cache;
};

template <typename T>
BlockResult<T> stcnn_block_forward(const Tensor<T>& x, const StcnnBlock<T>& block, double dropout_rate,
                                   Mode mode, std::uint64_t dropout_seed);

template <typename T>
struct BlockGrads {
    Tensor<T> grad_in;
    Conv3dGrads<T> conv;
    std::vector<T> grad_gamma, grad_beta;
};

template <typename T>
BlockGrads<T> stcnn_block_backward(const StcnnBlock<T>& block, const BlockCache<T>& cache,
                                   const Tensor<T>& grad_out);

// ---- Full model.

template <typename T>
struct LipnetCache {
    FpaCache<T> fpa_input, fpa_f1, fpa_f2;
    std::array<BlockCache<T>, 3> blocks;
    Shape5 block3_shape;
    BiGruCache<T> gru1, gru2;
    Mat<T> gru2_out;
    Mat<T> log_probs;
    bool valid = false;
};

template <typename T>
struct LipnetForward {
    Mat<T> log_probs; // t x num_classes, rows normalized
    LipnetCache<T> cache;
};

// Single-video forward (batch axis 1). Pure with respect to the parameters;
// train-mode running-stat updates are applied by apply_running_updates.
template <typename T>
LipnetForward<T> lipnet_forward(const ModelParams<T>& params, const Tensor<T>& video, Mode mode,
                                std::uint64_t dropout_seed = 0);

template <typename T>
ModelParams<T> lipnet_backward(const ModelParams<T>& params, const LipnetCache<T>& cache,
                               const Mat<T>& grad_log_probs);

template <typename T>
void apply_running_updates(ModelParams<T>& params, const LipnetCache<T>& cache);

// ---- Adam.

struct AdamConfig {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v; // aligned with learnable tensor_views order
    std::int64_t step = 0;
};

template <typename T>
AdamState<T> adam_init(ModelParams<T>& params);

// Single-tensor update, step is 1-based.
template <typename T>
void adam_update(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v,
                 std::int64_t step, const AdamConfig& cfg);

// Aborts (throws, no partial update) if any gradient is non-finite.
template <typename T>
void adam_step(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& state, const AdamConfig& cfg);

// ---- Training.

template <typename T>
struct Sample {
    Tensor<T> video;
    std::vector<int> label;
};

struct TrainConfig {
    std::int64_t batch = 8;
    AdamConfig adam;
};

// One pass over seeded-shuffled mini-batches; per-sample forward/backward may
// run on separate workers, gradient accumulation and running-stat updates
// follow a fixed sample order. Returns the mean CTC loss.
template <typename T>
T train_epoch(const std::vector<Sample<T>>& data, ModelParams<T>& params, AdamState<T>& adam,
              const TrainConfig& cfg, std::uint64_t seed, std::int64_t epoch);

} // namespace fpa3d
