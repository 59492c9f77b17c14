// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpa3d/errors.hpp"
#include "fpa3d/rng.hpp"

namespace fpa3d {

// Dense rank-5 shape, axis order (batch, channel, time, height, width).
struct Shape5 {
    std::int64_t n = 1, c = 1, t = 1, h = 1, w = 1;

    bool operator==(const Shape5&) const = default;

    void validate() const;
    std::int64_t numel() const; // throws SizeError on overflow
    std::string str() const;
};

// Rank-5 dense tensor, row-major in (n, c, t, h, w). Immutable by convention
// once built: all ops return new tensors and never touch their inputs.
template <typename T>
struct Tensor {
    Shape5 shape{};
    std::vector<T> data;

    Tensor() : data(1, T(0)) {}
    explicit Tensor(const Shape5& s) : shape(s) {
        s.validate();
        data.assign(static_cast<std::size_t>(s.numel()), T(0));
    }

    static Tensor zeros(const Shape5& s) { return Tensor(s); }

    static Tensor constant(const Shape5& s, T value) {
        Tensor out(s);
        for (auto& v : out.data) v = value;
        return out;
    }

    // Bit-reproducible for a given seed regardless of thread count.
    static Tensor uniform(const Shape5& s, T lo, T hi, std::uint64_t seed) {
        Tensor out(s);
        const CounterRng rng(seed, "tensor.fill");
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<T>(rng.uniform(i, static_cast<double>(lo), static_cast<double>(hi)));
        return out;
    }

    std::size_t index(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) const {
        return static_cast<std::size_t>((((n * shape.c + c) * shape.t + t) * shape.h + h) * shape.w + w);
    }

    T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) {
        return data[index(n, c, t, h, w)];
    }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) const {
        return data[index(n, c, t, h, w)];
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
};

using Tensor5f = Tensor<float>;
using Tensor5d = Tensor<double>;

enum class Elementwise { add, mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::add); }

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::mul); }

// Appends `extra` copies of the last frame.
template <typename T>
Tensor<T> pad_time_replicate(const Tensor<T>& x, std::int64_t extra);

// Keeps frames [0, t_target).
template <typename T>
Tensor<T> crop_time(const Tensor<T>& x, std::int64_t t_target);

template <typename T>
Tensor<T> cast_tensor(const Tensor<float>& x);

// "VID5" raw tensor file: magic 'V''I''D''5', five u32 LE extents
// (n,c,t,h,w), then f32 LE payload in axis order.
void save_vid5(const std::string& path, const Tensor<float>& x);
Tensor<float> load_vid5(const std::string& path);

} // namespace fpa3d
