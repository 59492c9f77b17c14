// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/config.hpp"

#include <fstream>
#include <sstream>

namespace fpa3d {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(int line_no, const std::string& msg) {
    throw FormatError("config line " + std::to_string(line_no) + ": " + msg);
}

std::int64_t to_int(const std::string& v, int line_no) {
    try {
        std::size_t used = 0;
        const std::int64_t r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        fail(line_no, "expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& v, int line_no) {
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        fail(line_no, "expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, int line_no) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    fail(line_no, "expected boolean (true/false/on/off), got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> parts;
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) parts.push_back(t);
    }
    return parts;
}

} // namespace

std::vector<std::pair<FpaPosition, FpaVariant>> parse_fpa_positions(const std::string& text) {
    std::vector<std::pair<FpaPosition, FpaVariant>> out;
    if (trim(text) == "none" || trim(text).empty()) return out;
    for (const std::string& item : split_csv(text)) {
        std::string pos = item;
        FpaVariant variant = FpaVariant::spatiotemporal_3d;
        const auto colon = item.find(':');
        if (colon != std::string::npos) {
            pos = trim(item.substr(0, colon));
            const std::string var = trim(item.substr(colon + 1));
            if (var == "2d")
                variant = FpaVariant::spatial_2d;
            else if (var == "3d")
                variant = FpaVariant::spatiotemporal_3d;
            else
                throw ArgumentError("unknown FPA variant '" + var + "' (expected 2d or 3d)");
        }
        FpaPosition p;
        if (pos == "input")
            p = FpaPosition::input;
        else if (pos == "f1")
            p = FpaPosition::f1;
        else if (pos == "f2")
            p = FpaPosition::f2;
        else
            throw ArgumentError("unknown FPA position '" + pos + "' (expected input, f1 or f2)");
        for (const auto& existing : out)
            if (existing.first == p) throw ArgumentError("duplicate FPA position '" + pos + "'");
        out.emplace_back(p, variant);
    }
    return out;
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value, int line_no) {
    if (key == "model.t") cfg.model.t = to_int(value, line_no);
    else if (key == "model.h") cfg.model.h = to_int(value, line_no);
    else if (key == "model.w") cfg.model.w = to_int(value, line_no);
    else if (key == "model.channels") {
        const auto parts = split_csv(value);
        if (parts.size() != 3) fail(line_no, "model.channels needs 3 comma-separated values");
        for (std::size_t i = 0; i < 3; ++i) cfg.model.channels[i] = to_int(parts[i], line_no);
    } else if (key == "model.hidden") cfg.model.hidden = to_int(value, line_no);
    else if (key == "model.dropout") cfg.model.dropout = to_double(value, line_no);
    else if (key == "fpa.positions") {
        try {
            cfg.model.fpa_positions = parse_fpa_positions(value);
        } catch (const ArgumentError& e) {
            fail(line_no, e.what());
        }
    } else if (key == "fpa.levels") cfg.model.fpa.levels = static_cast<int>(to_int(value, line_no));
    else if (key == "fpa.mask") {
        if (value == "sigmoid") cfg.model.fpa.mask_activation = MaskActivation::sigmoid;
        else if (value == "identity") cfg.model.fpa.mask_activation = MaskActivation::identity;
        else fail(line_no, "fpa.mask must be sigmoid or identity");
    } else if (key == "fpa.batchnorm") cfg.model.fpa.use_batchnorm = to_bool(value, line_no);
    else if (key == "fpa.dropout") cfg.model.fpa.use_dropout = to_bool(value, line_no);
    else if (key == "fpa.dropout_rate") cfg.model.fpa.dropout_rate = to_double(value, line_no);
    else if (key == "train.epochs") cfg.epochs = to_int(value, line_no);
    else if (key == "train.batch") cfg.batch = to_int(value, line_no);
    else if (key == "train.lr") cfg.adam.lr = to_double(value, line_no);
    else if (key == "train.beta1") cfg.adam.beta1 = to_double(value, line_no);
    else if (key == "train.beta2") cfg.adam.beta2 = to_double(value, line_no);
    else if (key == "train.eps") cfg.adam.eps = to_double(value, line_no);
    else if (key == "train.seed") cfg.seed = static_cast<std::uint64_t>(to_int(value, line_no));
    else if (key == "train.threads") cfg.threads = to_int(value, line_no);
    else if (key == "data.slots") cfg.grammar_slots = to_int(value, line_no);
    else if (key == "path.data") cfg.data_dir = value;
    else if (key == "path.out") cfg.out_dir = value;
    else if (key == "path.ckpt") cfg.ckpt_path = value;
    else fail(line_no, "unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(line_no, "empty key");
        apply_config_kv(cfg, key, value, line_no);
    }
    return cfg;
}

} // namespace fpa3d
