// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: corpus synthesis, training, evaluation, gradient
// checking, micro-benchmarks and attention-mask export.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric failure.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpa3d/checkpoint.hpp"
#include "fpa3d/config.hpp"
#include "fpa3d/ctc.hpp"
#include "fpa3d/gradcheck_suite.hpp"
#include "fpa3d/kernels_ref.hpp"
#include "fpa3d/metrics.hpp"
#include "fpa3d/model.hpp"
#include "fpa3d/synthdata.hpp"

namespace {

using namespace fpa3d;
namespace fs = std::filesystem;

struct SynthOpts {
    std::string out;
    std::int64_t n = 100;
    std::uint64_t seed = 1;
    std::int64_t slots = 6;
    std::int64_t frames = 24;
    std::int64_t size = 32;
    double noise = 0.02;
};

int cmd_synth(const SynthOpts& o) {
    const Grammar grammar = Grammar::reduced(static_cast<std::size_t>(o.slots));
    RenderConfig rc;
    rc.t = o.frames;
    rc.h = o.size;
    rc.w = o.size;
    rc.noise_sigma = o.noise;
    const auto manifest = gen_corpus(grammar, o.n, o.seed, o.out, rc);
    std::int64_t val = 0;
    for (const auto& e : manifest.entries) val += e.is_val ? 1 : 0;
    std::cout << "synth n=" << o.n << " val=" << val << " frames=" << rc.t << " size=" << rc.h
              << " out=" << o.out << "\n";
    return 0;
}

struct Dataset {
    std::vector<Sample<float>> train;
    std::vector<Sample<float>> val;
    std::vector<std::string> val_refs;
    Shape5 input_shape;
};

Dataset load_dataset(const std::string& dir, const Alphabet& alphabet) {
    Dataset d;
    const fs::path root(dir);
    std::vector<ManifestEntry> train_entries, val_entries;
    if (fs::exists(root / "train.tsv")) {
        train_entries = load_manifest((root / "train.tsv").string());
        if (fs::exists(root / "val.tsv")) val_entries = load_manifest((root / "val.tsv").string());
    } else if (fs::exists(root / "manifest.tsv")) {
        train_entries = load_manifest((root / "manifest.tsv").string());
    } else {
        throw FormatError("no train.tsv or manifest.tsv in " + dir);
    }
    if (train_entries.empty()) throw FormatError("empty training manifest in " + dir);

    auto load = [&](const std::vector<ManifestEntry>& entries, std::vector<Sample<float>>& out) {
        for (const auto& e : entries) {
            Sample<float> s;
            s.video = load_vid5(e.path);
            s.label = alphabet.encode(e.sentence);
            if (s.video.shape.t < ctc_min_frames(s.label))
                throw NumericError("sample '" + e.sentence + "' needs " +
                                   std::to_string(ctc_min_frames(s.label)) + " frames but video has " +
                                   std::to_string(s.video.shape.t) +
                                   " (regenerate the corpus with more --frames)");
            out.push_back(std::move(s));
        }
    };
    load(train_entries, d.train);
    load(val_entries, d.val);
    for (const auto& e : val_entries) d.val_refs.push_back(e.sentence);
    d.input_shape = d.train.front().video.shape;
    return d;
}

EvalReport eval_model(const ModelParams<float>& params, const std::vector<Sample<float>>& videos,
                      const std::vector<std::string>& refs, const Alphabet& alphabet) {
    std::vector<std::string> hyps(videos.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(videos.size()); ++i) {
        const auto fwd = lipnet_forward(params, videos[static_cast<std::size_t>(i)].video, Mode::eval);
        hyps[static_cast<std::size_t>(i)] = greedy_decode(fwd.log_probs, alphabet);
    }
    const std::size_t slots = tokenize(refs.front(), Tokenize::words).size();
    return evaluate_corpus(hyps, refs, slots);
}

struct TrainOpts {
    std::string data, config_path, out = "model.fpa3d", fpa;
    std::int64_t epochs = -1;
    std::int64_t threads = 0;
    std::int64_t seed = -1;
};

int cmd_train(const TrainOpts& o) {
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : parse_config(o.config_path);
    if (o.epochs >= 0) cfg.epochs = o.epochs;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.threads > 0) cfg.threads = o.threads;
    if (!o.fpa.empty()) cfg.model.fpa_positions = parse_fpa_positions(o.fpa);
    if (cfg.threads > 0) omp_set_num_threads(static_cast<int>(cfg.threads));

    const Alphabet alphabet = Alphabet::lipreading();
    Dataset data = load_dataset(o.data, alphabet);

    cfg.model.in_c = data.input_shape.c;
    cfg.model.t = data.input_shape.t;
    cfg.model.h = data.input_shape.h;
    cfg.model.w = data.input_shape.w;
    cfg.model.num_classes = alphabet.num_classes();

    ModelParams<float> params = init_model<float>(cfg.model, stream_key(cfg.seed, "init"));
    AdamState<float> adam = adam_init(params);
    TrainConfig tc;
    tc.batch = cfg.batch;
    tc.adam = cfg.adam;

    std::cout.precision(9);
    std::cout << "train samples=" << data.train.size() << " val=" << data.val.size()
              << " epochs=" << cfg.epochs << " batch=" << tc.batch << " lr=" << tc.adam.lr
              << " seed=" << cfg.seed << "\n";
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float loss = train_epoch(data.train, params, adam, tc, cfg.seed, epoch);
        std::cout << "epoch=" << (epoch + 1) << " loss=" << loss << "\n";
    }

    save_model(o.out, params, adam);
    std::cout << "checkpoint=" << o.out << "\n";

    if (!data.val.empty()) {
        const EvalReport report = eval_model(params, data.val, data.val_refs, alphabet);
        std::cout << "val " << report.to_line() << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, std::int64_t threads) {
    if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
    LoadedModel loaded = load_model(ckpt);
    const Alphabet alphabet = Alphabet::lipreading();

    const fs::path root(data_dir);
    std::vector<ManifestEntry> entries;
    if (fs::exists(root / "val.tsv")) entries = load_manifest((root / "val.tsv").string());
    if (entries.empty() && fs::exists(root / "manifest.tsv"))
        entries = load_manifest((root / "manifest.tsv").string());
    if (entries.empty()) throw FormatError("no evaluation entries under " + data_dir);

    std::vector<Sample<float>> videos;
    std::vector<std::string> refs;
    for (const auto& e : entries) {
        videos.push_back({load_vid5(e.path), {}});
        refs.push_back(e.sentence);
    }
    std::cout.precision(9);
    const EvalReport report = eval_model(loaded.params, videos, refs, alphabet);
    std::cout << "val " << report.to_line() << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& filter, std::int64_t threads) {
    if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
    const auto reports = run_gradcheck_suite(seed, filter);
    if (reports.empty()) throw ArgumentError("gradcheck: no op matches '" + filter + "'");
    bool ok = true;
    std::cout.precision(3);
    for (const auto& r : reports) {
        r.print(std::cout);
        ok = ok && r.pass;
    }
    std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
    return ok ? 0 : 3;
}

struct BenchStats {
    double median = 0.0, p10 = 0.0, p90 = 0.0;
};

template <typename Fn>
BenchStats bench_fn(Fn&& fn, std::int64_t repeats) {
    fn(); // warm-up, untimed
    std::vector<double> ms;
    for (std::int64_t i = 0; i < repeats; ++i) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto end = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(end - start).count());
    }
    std::sort(ms.begin(), ms.end());
    auto at = [&](double q) { return ms[static_cast<std::size_t>(q * (static_cast<double>(ms.size()) - 1.0))]; };
    return {at(0.5), at(0.1), at(0.9)};
}

void print_stats(const std::string& label, const BenchStats& s, std::int64_t elems) {
    std::printf("%s median=%.3fms p10=%.3fms p90=%.3fms elems_per_s=%.3e\n", label.c_str(), s.median, s.p10,
                s.p90, static_cast<double>(elems) / (s.median * 1e-3));
}

int cmd_bench(const std::string& op, const std::string& shape_str, std::int64_t threads,
              std::int64_t repeats) {
    if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
    Shape5 s{4, 8, 24, 32, 32};
    if (!shape_str.empty()) {
        long long n, c, t, h, w;
        if (std::sscanf(shape_str.c_str(), "%lld,%lld,%lld,%lld,%lld", &n, &c, &t, &h, &w) != 5)
            throw ArgumentError("bench: --shape must be n,c,t,h,w");
        s = Shape5{n, c, t, h, w};
        s.validate();
    }
    std::cout << "bench op=" << op << " shape=" << s.str() << " threads=" << omp_get_max_threads()
              << " hardware_threads=" << omp_get_num_procs() << " repeats=" << repeats << "\n";

    const Tensor<float> x = Tensor<float>::uniform(s, -1.0f, 1.0f, 42);
    if (op == "conv3d") {
        Conv3dParams<float> p;
        p.c_in = s.c;
        p.c_out = s.c;
        p.kt = p.kh = p.kw = 3;
        p.pad = {1, 1, 1};
        p.weights = Tensor<float>::uniform(Shape5{s.c, s.c, 3, 3, 3}, -0.2f, 0.2f, 7).data;
        p.bias.assign(static_cast<std::size_t>(s.c), 0.0f);
        const std::int64_t elems = conv3d_out_shape(s, p).numel();
        const auto par = bench_fn([&] { conv3d(x, p); }, repeats);
        print_stats("parallel", par, elems);
        const auto ser = bench_fn([&] { ref::conv3d(x, p); }, repeats);
        print_stats("serial", ser, elems);
        std::printf("speedup=%.3f\n", ser.median / par.median);
    } else if (op == "elementwise") {
        const Tensor<float> y = Tensor<float>::uniform(s, -1.0f, 1.0f, 43);
        const auto par = bench_fn([&] { mul(x, y); }, repeats);
        print_stats("parallel", par, s.numel());
        const auto ser = bench_fn([&] { ref::elementwise(x, y, Elementwise::mul); }, repeats);
        print_stats("serial", ser, s.numel());
        std::printf("speedup=%.3f\n", ser.median / par.median);
    } else if (op == "fpa2d" || op == "fpa3d") {
        FpaConfig fc;
        fc.variant = op == "fpa3d" ? FpaVariant::spatiotemporal_3d : FpaVariant::spatial_2d;
        const FpaModule<float> module = fpa_build<float>(fc, s.c, 7);
        const auto fpa = bench_fn([&] { fpa_forward(module, x, Mode::eval); }, repeats);
        print_stats("fpa_forward", fpa, s.numel());

        // backbone blocks on the same input geometry, for the overhead ratio
        LipNetConfig cfg;
        cfg.in_c = s.c;
        cfg.t = s.t;
        cfg.h = s.h;
        cfg.w = s.w;
        const ModelParams<float> model = init_model<float>(cfg, 7);
        auto blocks = [&] {
            Tensor<float> cur = x;
            for (int i = 0; i < 3; ++i)
                cur = stcnn_block_forward(cur, model.blocks[static_cast<std::size_t>(i)], 0.0, Mode::eval, 0).out;
        };
        const auto bl = bench_fn(blocks, repeats);
        print_stats("backbone_blocks", bl, s.numel());
        std::printf("fpa_overhead_ratio=%.3f\n", fpa.median / bl.median);
    } else {
        throw ArgumentError("bench: unknown op '" + op + "' (conv3d, elementwise, fpa2d, fpa3d)");
    }
    return 0;
}

int cmd_mask_dump(const std::string& ckpt, const std::string& video_path, const std::string& position,
                  const std::string& out_dir) {
    LoadedModel loaded = load_model(ckpt);
    const FpaModule<float>* module = nullptr;
    if (position == "input")
        module = loaded.params.fpa_input ? &*loaded.params.fpa_input : nullptr;
    else if (position == "f1")
        module = loaded.params.fpa_f1 ? &*loaded.params.fpa_f1 : nullptr;
    else if (position == "f2")
        module = loaded.params.fpa_f2 ? &*loaded.params.fpa_f2 : nullptr;
    else
        throw ArgumentError("mask-dump: position must be input, f1 or f2");
    if (!module) throw ArgumentError("mask-dump: checkpoint has no FPA module at position " + position);

    const Tensor<float> video = load_vid5(video_path);
    if (video.shape.c != module->channels)
        throw ShapeError("mask-dump: video has " + std::to_string(video.shape.c) + " channels, module expects " +
                         std::to_string(module->channels));
    const auto fwd = fpa_forward(*module, video, Mode::eval);
    const Tensor<float>& mask = fwd.cache.mask;

    fs::create_directories(out_dir);
    const Shape5& s = mask.shape;
    std::ofstream csv(fs::path(out_dir) / "mask.csv");
    if (!csv) throw FormatError("mask-dump: cannot write to " + out_dir);
    csv.precision(9);
    for (std::int64_t t = 0; t < s.t; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03lld.pgm", static_cast<long long>(t));
        std::ofstream pgm(fs::path(out_dir) / name, std::ios::binary);
        pgm << "P5\n" << s.w << " " << s.h << "\n255\n";
        for (std::int64_t h = 0; h < s.h; ++h) {
            for (std::int64_t w = 0; w < s.w; ++w) {
                double avg = 0.0;
                for (std::int64_t c = 0; c < s.c; ++c) avg += mask.at(0, c, t, h, w);
                avg /= static_cast<double>(s.c);
                const auto byte = static_cast<unsigned char>(std::lround(255.0 * avg));
                pgm.write(reinterpret_cast<const char*>(&byte), 1);
                csv << t << "," << h << "," << w << "," << avg << "\n";
            }
        }
    }
    std::cout << "mask-dump frames=" << s.t << " out=" << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatiotemporal feature-pyramid attention lipreading toolkit"};
    app.require_subcommand(1);

    SynthOpts synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic viseme corpus");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--n", synth.n, "number of videos")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "corpus seed")->capture_default_str();
    synth_cmd->add_option("--slots", synth.slots, "grammar slots (1-6)")->capture_default_str();
    synth_cmd->add_option("--frames", synth.frames, "frames per video")->capture_default_str();
    synth_cmd->add_option("--size", synth.size, "frame height/width")->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise, "gaussian noise sigma")->capture_default_str();

    TrainOpts train;
    auto* train_cmd = app.add_subcommand("train", "train the model on a corpus");
    train_cmd->add_option("--data", train.data, "corpus directory")->required();
    train_cmd->add_option("--config", train.config_path, "key = value config file");
    train_cmd->add_option("--out", train.out, "checkpoint output path")->capture_default_str();
    train_cmd->add_option("--epochs", train.epochs, "override epoch count (default from config: 30)");
    train_cmd->add_option("--seed", train.seed, "override run seed (default from config: 1)");
    train_cmd->add_option("--threads", train.threads, "worker threads (default: all cores)");
    train_cmd->add_option("--fpa", train.fpa, "FPA positions, e.g. f2:3d or input:2d,f2:3d");

    std::string eval_ckpt, eval_data;
    std::int64_t eval_threads = 0;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "corpus directory")->required();
    eval_cmd->add_option("--threads", eval_threads, "worker threads (default: all cores)");

    std::uint64_t gc_seed = 1234;
    std::string gc_filter;
    std::int64_t gc_threads = 0;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc_cmd->add_option("--seed", gc_seed, "suite seed")->capture_default_str();
    gc_cmd->add_option("--op", gc_filter, "only ops whose name contains this");
    gc_cmd->add_option("--threads", gc_threads, "worker threads (default: all cores)");

    std::string bench_op = "conv3d", bench_shape;
    std::int64_t bench_threads = 0, bench_repeats = 9;
    auto* bench_cmd = app.add_subcommand("bench", "micro-benchmarks, parallel vs serial reference");
    bench_cmd->add_option("--op", bench_op, "conv3d, elementwise, fpa2d or fpa3d")->capture_default_str();
    bench_cmd->add_option("--shape", bench_shape, "n,c,t,h,w (default 4,8,24,32,32)");
    bench_cmd->add_option("--threads", bench_threads, "worker threads (default: all cores)");
    bench_cmd->add_option("--repeats", bench_repeats, "timed repetitions")->capture_default_str();

    std::string md_ckpt, md_video, md_position, md_out;
    auto* md_cmd = app.add_subcommand("mask-dump", "export attention masks as PGM + CSV");
    md_cmd->add_option("--ckpt", md_ckpt, "checkpoint path")->required();
    md_cmd->add_option("--video", md_video, "VID5 input video")->required();
    md_cmd->add_option("--position", md_position, "input, f1 or f2")->required();
    md_cmd->add_option("--out", md_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth);
        if (train_cmd->parsed()) return cmd_train(train);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_threads);
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_filter, gc_threads);
        if (bench_cmd->parsed()) return cmd_bench(bench_op, bench_shape, bench_threads, bench_repeats);
        if (md_cmd->parsed()) return cmd_mask_dump(md_ckpt, md_video, md_position, md_out);
    } catch (const NumericError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const CorruptionError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 1;
}
