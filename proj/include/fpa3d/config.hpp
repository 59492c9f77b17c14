// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "fpa3d/model.hpp"

namespace fpa3d {

// Flat "key = value" run configuration; '#' starts a comment, unknown keys
// are rejected with their line number.
struct RunConfig {
    LipNetConfig model;       // also holds fpa knobs + positions
    std::int64_t epochs = 30;
    std::int64_t batch = 8;
    AdamConfig adam;          // lr defaults to 1e-4
    std::uint64_t seed = 1;
    std::int64_t threads = 0; // 0 = library default
    std::int64_t grammar_slots = 6;
    std::string data_dir;
    std::string out_dir;
    std::string ckpt_path;
};

RunConfig parse_config(const std::string& path);

// Applies one "key = value" assignment (shared by the file parser and tests).
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value, int line_no);

// Parses a position list like "f2" or "input:2d,f2:3d"; bare positions
// default to the 3d variant.
std::vector<std::pair<FpaPosition, FpaVariant>> parse_fpa_positions(const std::string& text);

} // namespace fpa3d
