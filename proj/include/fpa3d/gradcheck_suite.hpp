// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fpa3d/gradcheck.hpp"

namespace fpa3d {

// The standard 64-bit finite-difference suite: conv3d (plus a linear
// identity-kernel case), maxpool3d on tie-free input, batchnorm3d,
// activations, bilinear/temporal upsampling, dropout, the bidirectional GRU,
// both FPA variants and the full model on a tiny configuration.
// `filter` keeps only ops whose name contains it (empty keeps all).
std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed, const std::string& filter = "");

} // namespace fpa3d
