// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/tensor.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace fpa3d {

void Shape5::validate() const {
    if (n < 1 || c < 1 || t < 1 || h < 1 || w < 1)
        throw ShapeError("every extent must be >= 1, got " + str());
    (void)numel();
}

std::int64_t Shape5::numel() const {
    std::int64_t p = 1;
    for (std::int64_t d : {n, c, t, h, w}) {
        if (__builtin_mul_overflow(p, d, &p) || p < 0)
            throw SizeError("element count overflows index type for " + str());
    }
    return p;
}

std::string Shape5::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << t << "," << h << "," << w << ")";
    return os.str();
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
    if (!(a.shape == b.shape))
        throw ShapeError("elementwise operands differ: " + a.shape.str() + " vs " + b.shape.str());
    Tensor<T> out(a.shape);
    const std::int64_t total = out.numel();
    if (kind == Elementwise::add) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) out.data[i] = a.data[i] + b.data[i];
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < total; ++i) out.data[i] = a.data[i] * b.data[i];
    }
    return out;
}

template <typename T>
Tensor<T> pad_time_replicate(const Tensor<T>& x, std::int64_t extra) {
    if (extra < 0) throw ArgumentError("pad_time_replicate: extra must be >= 0");
    if (extra == 0) return x;
    Shape5 s = x.shape;
    s.t += extra;
    Tensor<T> out(s);
    const std::int64_t frame = x.shape.h * x.shape.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            for (std::int64_t t = 0; t < s.t; ++t) {
                const std::int64_t src_t = t < x.shape.t ? t : x.shape.t - 1;
                const T* src = &x.data[x.index(n, c, src_t, 0, 0)];
                T* dst = &out.data[out.index(n, c, t, 0, 0)];
                std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(frame));
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> crop_time(const Tensor<T>& x, std::int64_t t_target) {
    if (t_target < 1 || t_target > x.shape.t)
        throw ShapeError("crop_time: t_target " + std::to_string(t_target) + " out of [1, " +
                         std::to_string(x.shape.t) + "]");
    if (t_target == x.shape.t) return x;
    Shape5 s = x.shape;
    s.t = t_target;
    Tensor<T> out(s);
    const std::int64_t frame = x.shape.h * x.shape.w;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            for (std::int64_t t = 0; t < s.t; ++t) {
                std::memcpy(&out.data[out.index(n, c, t, 0, 0)], &x.data[x.index(n, c, t, 0, 0)],
                            sizeof(T) * static_cast<std::size_t>(frame));
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> cast_tensor(const Tensor<float>& x) {
    Tensor<T> out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<T>(x.data[i]);
    return out;
}

namespace {

void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated VID5 file reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void save_vid5(const std::string& path, const Tensor<float>& x) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    const unsigned char magic[4] = {0x56, 0x49, 0x44, 0x35};
    os.write(reinterpret_cast<const char*>(magic), 4);
    for (std::int64_t d : {x.shape.n, x.shape.c, x.shape.t, x.shape.h, x.shape.w})
        write_u32le(os, static_cast<std::uint32_t>(d));
    for (float v : x.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32le(os, bits);
    }
    if (!os) throw FormatError("short write to " + path);
}

Tensor<float> load_vid5(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    unsigned char magic[4];
    if (!is.read(reinterpret_cast<char*>(magic), 4)) throw FormatError("truncated VID5 file " + path);
    if (magic[0] != 0x56 || magic[1] != 0x49 || magic[2] != 0x44 || magic[3] != 0x35)
        throw FormatError("bad VID5 magic in " + path);
    Shape5 s;
    s.n = read_u32le(is, "n");
    s.c = read_u32le(is, "c");
    s.t = read_u32le(is, "t");
    s.h = read_u32le(is, "h");
    s.w = read_u32le(is, "w");
    s.validate();
    Tensor<float> out(s);
    for (auto& v : out.data) {
        const std::uint32_t bits = read_u32le(is, "payload");
        std::memcpy(&v, &bits, 4);
    }
    return out;
}

template Tensor<float> elementwise(const Tensor<float>&, const Tensor<float>&, Elementwise);
template Tensor<double> elementwise(const Tensor<double>&, const Tensor<double>&, Elementwise);
template Tensor<float> pad_time_replicate(const Tensor<float>&, std::int64_t);
template Tensor<double> pad_time_replicate(const Tensor<double>&, std::int64_t);
template Tensor<float> crop_time(const Tensor<float>&, std::int64_t);
template Tensor<double> crop_time(const Tensor<double>&, std::int64_t);
template Tensor<float> cast_tensor<float>(const Tensor<float>&);
template Tensor<double> cast_tensor<double>(const Tensor<float>&);

} // namespace fpa3d
