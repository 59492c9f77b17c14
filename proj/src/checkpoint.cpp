// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace fpa3d {

namespace {

constexpr char kMagic[6] = {'F', 'P', 'A', '3', 'D', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw FormatError("checkpoint truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_checkpoint(const std::string& path, const std::vector<CkptTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw FormatError("checkpoint tensor name too long: " + t.name);
        put_u16(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        if (t.dims.size() > 0xFF) throw FormatError("checkpoint tensor rank too large: " + t.name);
        const auto rank = static_cast<unsigned char>(t.dims.size());
        os.write(reinterpret_cast<const char*>(&rank), 1);
        std::size_t count = 1;
        for (const std::uint32_t d : t.dims) {
            put_u32(os, d);
            count *= d;
        }
        if (t.values.size() != count)
            throw FormatError("checkpoint tensor " + t.name + " payload does not match extents");
        for (const float v : t.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(os, bits);
        }
    }
    if (!os) throw FormatError("short write to " + path);
}

std::vector<CkptTensor> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[6];
    if (!is.read(magic, 6)) throw FormatError("checkpoint truncated: " + path);
    if (std::memcmp(magic, kMagic, 6) != 0) throw FormatError("bad checkpoint magic in " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (supported: 1)");
    const std::uint32_t count = get_u32(is);
    std::vector<CkptTensor> tensors(count);
    for (auto& t : tensors) {
        const std::uint16_t name_len = get_u16(is);
        t.name.resize(name_len);
        if (!is.read(t.name.data(), name_len)) throw FormatError("checkpoint truncated in name");
        unsigned char rank;
        if (!is.read(reinterpret_cast<char*>(&rank), 1)) throw FormatError("checkpoint truncated in rank");
        t.dims.resize(rank);
        std::size_t n = 1;
        for (auto& d : t.dims) {
            d = get_u32(is);
            n *= d;
        }
        t.values.resize(n);
        for (auto& v : t.values) {
            const std::uint32_t bits = get_u32(is);
            std::memcpy(&v, &bits, 4);
        }
    }
    return tensors;
}

namespace {

// cfg.model layout: in_c, t, h, w, c1..c3, 3x(kt,kh,kw), hidden, classes, dropout
std::vector<float> pack_model_cfg(const LipNetConfig& c) {
    std::vector<float> v;
    for (std::int64_t d : {c.in_c, c.t, c.h, c.w, c.channels[0], c.channels[1], c.channels[2]})
        v.push_back(static_cast<float>(d));
    for (const auto& k : c.kernels)
        for (std::int64_t d : k) v.push_back(static_cast<float>(d));
    v.push_back(static_cast<float>(c.hidden));
    v.push_back(static_cast<float>(c.num_classes));
    v.push_back(static_cast<float>(c.dropout));
    return v;
}

void unpack_model_cfg(const std::vector<float>& v, LipNetConfig& c) {
    if (v.size() != 19) throw FormatError("checkpoint: cfg.model has unexpected length");
    std::size_t i = 0;
    auto next = [&] { return static_cast<std::int64_t>(v[i++]); };
    c.in_c = next();
    c.t = next();
    c.h = next();
    c.w = next();
    for (auto& ch : c.channels) ch = next();
    for (auto& k : c.kernels)
        for (auto& d : k) d = next();
    c.hidden = next();
    c.num_classes = next();
    c.dropout = static_cast<double>(v[i]);
}

// cfg.fpa layout: levels, mask activation, batchnorm, dropout, dropout rate
std::vector<float> pack_fpa_cfg(const FpaConfig& c) {
    return {static_cast<float>(c.levels), c.mask_activation == MaskActivation::sigmoid ? 1.0f : 0.0f,
            c.use_batchnorm ? 1.0f : 0.0f, c.use_dropout ? 1.0f : 0.0f, static_cast<float>(c.dropout_rate)};
}

void unpack_fpa_cfg(const std::vector<float>& v, FpaConfig& c) {
    if (v.size() != 5) throw FormatError("checkpoint: cfg.fpa has unexpected length");
    c.levels = static_cast<int>(v[0]);
    c.mask_activation = v[1] != 0.0f ? MaskActivation::sigmoid : MaskActivation::identity;
    c.use_batchnorm = v[2] != 0.0f;
    c.use_dropout = v[3] != 0.0f;
    c.dropout_rate = static_cast<double>(v[4]);
}

} // namespace

void save_model(const std::string& path, ModelParams<float>& params, const AdamState<float>& adam) {
    std::vector<CkptTensor> tensors;
    tensors.push_back({"cfg.model", {19}, pack_model_cfg(params.config)});
    tensors.push_back({"cfg.fpa", {5}, pack_fpa_cfg(params.config.fpa)});
    // canonical position order keeps save -> load -> save byte-stable
    for (const FpaPosition pos : {FpaPosition::input, FpaPosition::f1, FpaPosition::f2}) {
        for (const auto& [p, variant] : params.config.fpa_positions) {
            if (p != pos) continue;
            tensors.push_back({"cfg.fpa." + fpa_position_name(pos),
                               {},
                               {variant == FpaVariant::spatiotemporal_3d ? 1.0f : 0.0f}});
        }
    }
    tensors.push_back({"adam.step", {}, {static_cast<float>(adam.step)}});

    std::size_t li = 0;
    for (auto view : tensor_views(params)) {
        tensors.push_back({view.name, view.dims, *view.flat});
        if (view.learnable) {
            tensors.push_back({view.name + ".m", view.dims, adam.m[li]});
            tensors.push_back({view.name + ".v", view.dims, adam.v[li]});
            ++li;
        }
    }
    write_checkpoint(path, tensors);
}

LoadedModel load_model(const std::string& path) {
    const auto tensors = read_checkpoint(path);
    std::map<std::string, const CkptTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;

    auto need = [&](const std::string& name) -> const CkptTensor& {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint missing tensor " + name);
        return *it->second;
    };

    LipNetConfig cfg;
    unpack_model_cfg(need("cfg.model").values, cfg);
    unpack_fpa_cfg(need("cfg.fpa").values, cfg.fpa);
    for (const FpaPosition pos : {FpaPosition::input, FpaPosition::f1, FpaPosition::f2}) {
        const auto it = by_name.find("cfg.fpa." + fpa_position_name(pos));
        if (it == by_name.end()) continue;
        cfg.fpa_positions.emplace_back(pos, it->second->values.at(0) != 0.0f
                                                ? FpaVariant::spatiotemporal_3d
                                                : FpaVariant::spatial_2d);
    }

    LoadedModel loaded{init_model<float>(cfg, 0), AdamState<float>{}};
    loaded.adam.step = static_cast<std::int64_t>(need("adam.step").values.at(0));
    for (auto view : tensor_views(loaded.params)) {
        const CkptTensor& t = need(view.name);
        if (t.values.size() != view.flat->size())
            throw FormatError("checkpoint tensor " + view.name + " has wrong size");
        *view.flat = t.values;
        if (view.learnable) {
            loaded.adam.m.push_back(need(view.name + ".m").values);
            loaded.adam.v.push_back(need(view.name + ".v").values);
        }
    }
    return loaded;
}

} // namespace fpa3d
