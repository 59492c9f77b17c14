// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fpa3d/checkpoint.hpp"
#include "fpa3d/config.hpp"

using namespace fpa3d;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const auto dir = fs::temp_directory_path() / "fpa3d_ckpt_test";
    fs::create_directories(dir);
    return dir;
}

std::string write_config(const std::string& body) {
    const auto path = tmp_dir() / "run.cfg";
    std::ofstream os(path);
    os << body;
    os.close();
    return path.string();
}

} // namespace

TEST_CASE("raw checkpoint container round trip") {
    const std::string path = (tmp_dir() / "raw.fpa3d").string();
    std::vector<CkptTensor> tensors{
        {"a", {2, 3}, {1, 2, 3, 4, 5, 6}},
        {"scalar", {}, {42.0f}},
        {"b.m", {4}, {0.1f, 0.2f, 0.3f, 0.4f}},
    };
    write_checkpoint(path, tensors);
    const auto back = read_checkpoint(path);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].name == tensors[i].name);
        CHECK(back[i].dims == tensors[i].dims);
        CHECK(back[i].values == tensors[i].values);
    }
}

TEST_CASE("model checkpoint round trip is bit exact, including adam state") {
    LipNetConfig cfg;
    cfg.t = 8;
    cfg.h = 16;
    cfg.w = 16;
    cfg.channels = {2, 3, 4};
    cfg.kernels = {{{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}};
    cfg.hidden = 5;
    cfg.fpa_positions = {{FpaPosition::f2, FpaVariant::spatiotemporal_3d},
                         {FpaPosition::input, FpaVariant::spatial_2d}};
    auto params = init_model<float>(cfg, 77);
    auto adam = adam_init(params);
    adam.step = 12345;
    for (auto& m : adam.m)
        for (auto& v : m) v = 0.125f;

    const std::string path = (tmp_dir() / "model.fpa3d").string();
    save_model(path, params, adam);
    auto loaded = load_model(path);

    CHECK(loaded.adam.step == 12345);
    CHECK(loaded.params.config.hidden == 5);
    CHECK(loaded.params.config.fpa_positions.size() == 2);
    CHECK(loaded.params.fpa_input.has_value());
    CHECK(loaded.params.fpa_f2.has_value());
    CHECK(!loaded.params.fpa_f1.has_value());
    CHECK(loaded.params.fpa_input->config.variant == FpaVariant::spatial_2d);

    auto a = tensor_views(params);
    auto b = tensor_views(loaded.params);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(*a[i].flat == *b[i].flat);
    }
    CHECK(adam.m == loaded.adam.m);
    CHECK(adam.v == loaded.adam.v);

    // second save produces identical bytes
    const std::string path2 = (tmp_dir() / "model2.fpa3d").string();
    save_model(path2, loaded.params, loaded.adam);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("checkpoint rejects bad magic, truncation and future versions") {
    const auto dir = tmp_dir();
    const std::string good = (dir / "good.fpa3d").string();
    write_checkpoint(good, {{"x", {1}, {1.0f}}});

    std::ifstream is(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    const std::string bad_magic = (dir / "bad_magic.fpa3d").string();
    {
        std::string corrupted = bytes;
        corrupted[0] = 'X';
        std::ofstream os(bad_magic, std::ios::binary);
        os.write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
    }
    CHECK_THROWS_AS(read_checkpoint(bad_magic), FormatError);

    const std::string truncated = (dir / "trunc.fpa3d").string();
    {
        std::ofstream os(truncated, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    }
    CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);

    const std::string v2 = (dir / "v2.fpa3d").string();
    {
        std::string future = bytes;
        future[6] = 2; // version u32 LE follows the 6-byte magic
        std::ofstream os(v2, std::ios::binary);
        os.write(future.data(), static_cast<std::streamsize>(future.size()));
    }
    try {
        read_checkpoint(v2);
        CHECK(false);
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("version 2") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos); // names the supported version
    }
}

TEST_CASE("config: empty file gives all defaults") {
    const RunConfig cfg = parse_config(write_config(""));
    CHECK(cfg.model.t == 24);
    CHECK(cfg.model.h == 32);
    CHECK(cfg.model.channels == std::array<std::int64_t, 3>{8, 16, 24});
    CHECK(cfg.model.hidden == 64);
    CHECK(cfg.model.num_classes == 28);
    CHECK(cfg.model.dropout == 0.3);
    CHECK(cfg.adam.lr == 1e-4);
    CHECK(cfg.adam.beta1 == 0.9);
    CHECK(cfg.adam.beta2 == 0.999);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.batch == 8);
    CHECK(cfg.model.fpa_positions.empty());
    CHECK(cfg.model.fpa.levels == 3);
    CHECK(cfg.model.fpa.mask_activation == MaskActivation::sigmoid);
    CHECK(cfg.model.fpa.dropout_rate == 0.3);
}

TEST_CASE("config: values, comments and lists parse") {
    const RunConfig cfg = parse_config(write_config("# training setup\n"
                                                    "train.lr = 0.0001\n"
                                                    "train.epochs = 12   # inline comment\n"
                                                    "model.channels = 4, 8, 12\n"
                                                    "fpa.positions = f2\n"
                                                    "fpa.mask = identity\n"
                                                    "\n"
                                                    "train.batch = 16\n"));
    CHECK(cfg.adam.lr == doctest::Approx(1e-4));
    CHECK(cfg.epochs == 12);
    CHECK(cfg.batch == 16);
    CHECK(cfg.model.channels == std::array<std::int64_t, 3>{4, 8, 12});
    REQUIRE(cfg.model.fpa_positions.size() == 1);
    CHECK(cfg.model.fpa_positions[0].first == FpaPosition::f2);
    // bare position defaults to the 3d variant
    CHECK(cfg.model.fpa_positions[0].second == FpaVariant::spatiotemporal_3d);
    CHECK(cfg.model.fpa.mask_activation == MaskActivation::identity);
}

TEST_CASE("config: errors name the line number") {
    try {
        parse_config(write_config("train.lr = 0.001\nbogus.key = 3\n"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        parse_config(write_config("\n\ntrain.epochs = soon\n"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config(write_config("just words\n")), FormatError);
    CHECK_THROWS_AS(parse_config("/nonexistent/path.cfg"), FormatError);
}

TEST_CASE("fpa position lists") {
    const auto both = parse_fpa_positions("input:2d,f2:3d");
    REQUIRE(both.size() == 2);
    CHECK(both[0].first == FpaPosition::input);
    CHECK(both[0].second == FpaVariant::spatial_2d);
    CHECK(both[1].first == FpaPosition::f2);
    CHECK(parse_fpa_positions("none").empty());
    CHECK_THROWS_AS(parse_fpa_positions("f3"), ArgumentError);
    CHECK_THROWS_AS(parse_fpa_positions("f2:4d"), ArgumentError);
    CHECK_THROWS_AS(parse_fpa_positions("f2,f2"), ArgumentError);
}
