// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpa3d/model.hpp"

namespace fpa3d {

// Checkpoint container format: magic "FPA3D\0", u32 LE version (= 1), u32 LE
// tensor count; per tensor u16 LE name length, UTF-8 name, u8 rank, rank u32
// LE extents, f32 LE payload. Rank-0 tensors carry exactly one value.
struct CkptTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

void write_checkpoint(const std::string& path, const std::vector<CkptTensor>& tensors);
std::vector<CkptTensor> read_checkpoint(const std::string& path);

// Everything needed to resume: all model tensors, Adam moments under ".m" /
// ".v" suffixes, the step count as rank-0 "adam.step", and config scalars
// under "cfg.*".
void save_model(const std::string& path, ModelParams<float>& params, const AdamState<float>& adam);

struct LoadedModel {
    ModelParams<float> params;
    AdamState<float> adam;
};

LoadedModel load_model(const std::string& path);

} // namespace fpa3d
