// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "fpa3d/mat.hpp"

namespace fpa3d {

// Gate convention: z gates the candidate.
//   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//   c_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
//   h_t = (1 - z_t) * h_{t-1} + z_t * c_t,  h_0 = 0
template <typename T>
struct GruDirParams {
    Mat<T> wz, wr, wh; // hidden x input
    Mat<T> uz, ur, uh; // hidden x hidden
    std::vector<T> bz, br, bh;
};

template <typename T>
struct BiGruParams {
    std::int64_t input = 0, hidden = 0;
    GruDirParams<T> fwd, bwd;
};

template <typename T>
BiGruParams<T> bigru_build(std::int64_t input, std::int64_t hidden, std::uint64_t seed,
                           const std::string& stream);

template <typename T>
struct GruDirCache {
    Mat<T> h;       // (t+1) x hidden, h[0] = 0, in processing order
    Mat<T> z, r, c; // t x hidden, in processing order
};

template <typename T>
struct BiGruCache {
    Mat<T> input;   // t x d, original order
    GruDirCache<T> fwd, bwd;
    bool valid = false;
};

template <typename T>
struct BiGruResult {
    Mat<T> out; // t x 2*hidden: [forward | backward] per timestep
    BiGruCache<T> cache;
};

template <typename T>
BiGruResult<T> bigru_forward(const Mat<T>& seq, const BiGruParams<T>& p);

template <typename T>
struct BiGruGrads {
    GruDirParams<T> fwd, bwd; // same layout as the parameters
};

template <typename T>
struct BiGruBackwardResult {
    Mat<T> grad_seq;
    BiGruGrads<T> grads;
};

template <typename T>
BiGruBackwardResult<T> bigru_backward(const BiGruParams<T>& p, const BiGruCache<T>& cache,
                                      const Mat<T>& grad_out);

} // namespace fpa3d
