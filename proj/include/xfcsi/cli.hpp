// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xfcsi/config.hpp"

namespace xfcsi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
    using Error::Error;
};

namespace detail {

inline void write_json(const std::string& path, const io::json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << j.dump(2) << '\n';
}

inline io::json resolve(const std::string& config, const std::vector<std::string>& sets) {
    return apply_overrides(load_run_config(config), sets);
}

}  // namespace detail

inline int cmd_generate(const io::json& cfg, const std::string& out_path, std::ostream& out) {
    const DatasetConfig dc = dataset_config(cfg);
    const Dataset d = generate_dataset(dc);
    const auto parent = std::filesystem::path(out_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_dataset(d, out_path);
    const std::string hash = io::content_hash(out_path);
    std::size_t blocked = 0;
    for (std::size_t i = 0; i < d.count; ++i) blocked += d.blocked(i) ? 1 : 0;
    detail::write_json(out_path + ".manifest.json",
                       {{"command", "generate-data"}, {"config", cfg}, {"samples", d.count}, {"blocked", blocked}, {"content_hash", hash}});
    out << "samples " << d.count << "\n"
        << "blocked " << blocked << "\n"
        << "content_hash " << hash << "\n";
    return kExitOk;
}

inline int cmd_train(const io::json& cfg, const std::string& data_path, const std::string& out_dir, bool quiet, std::ostream& out) {
    const TrainConfig tc = train_config(cfg);
    const Dataset d = load_dataset(data_path);
    const std::string data_hash = io::content_hash(data_path);
    std::filesystem::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(d, tc, [&](const EpochRecord& e) {
        if (quiet) return;
        out << "epoch " << e.epoch << " total " << io::fmt_double(e.total) << " cfm " << io::fmt_double(e.cfm);
        if (!std::isnan(e.test_nmse_db)) out << " test_nmse_db " << io::fmt_double(e.test_nmse_db);
        out << std::endl;
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const io::json meta = {{"dataset_hash", data_hash}, {"seed", tc.seed}, {"epochs", tc.epochs}};
    save_model(*r.model, out_dir, meta);
    write_history_csv(r.history, (std::filesystem::path(out_dir) / "history.csv").string());
    const auto& last = r.history.epochs.back();
    detail::write_json((std::filesystem::path(out_dir) / "manifest.json").string(),
                       {{"command", "train"},
                        {"config", cfg},
                        {"train", to_json(tc)},
                        {"seed", tc.seed},
                        {"dataset", data_path},
                        {"dataset_hash", data_hash},
                        {"final_test_nmse_db", last.test_nmse_db},
                        {"tau", r.model->tau.value()},
                        {"encoder_hash", io::content_hash((std::filesystem::path(out_dir) / kEncoderCheckpoint).string())},
                        {"velocity_hash", io::content_hash((std::filesystem::path(out_dir) / kVelocityCheckpoint).string())}});
    out << "final_test_nmse_db " << io::fmt_double(last.test_nmse_db) << "\n"
        << "train_seconds " << io::fmt_double(seconds) << "\n";
    return kExitOk;
}

inline int cmd_infer(const std::string& ckpt, const std::string& data_path, long long index, std::size_t K, const std::string& trace,
                     std::ostream& out) {
    if (K < 1) throw UsageError("--K must be >= 1");
    const Dataset d = load_dataset(data_path);
    if (index < 0 || static_cast<std::size_t>(index) >= d.count) {
        throw UsageError("--index " + std::to_string(index) + " out of range [0, " + std::to_string(d.count) + ")");
    }
    const auto m = load_model(ckpt);
    const std::size_t i = static_cast<std::size_t>(index);
    const SensingSample s = d.sample(i);
    std::vector<std::size_t> one{i};
    const EncoderBatch<float> b = encoder_batch<float>(d, one);
    const Inference<float> inf = infer_channel(m->encoder, m->field, b.images.reshaped({3, d.image_size, d.image_size}),
                                               b.clouds.reshaped({3, d.points}), b.coords.reshaped({2}), K);
    out << "index " << i << " user " << s.user_id << " frame " << s.frame_index + 1 << "\n";
    if (d.blocked(i)) {
        out << "ground truth is a blocked (zero) channel; metrics undefined\n";
    } else {
        out << "nmse_db " << io::fmt_double(nmse(s.channel, inf.h_hat).db) << "\n"
            << "cossim " << io::fmt_double(inf.h_hat.frobenius_sq() > 0 ? cosine_similarity(s.channel, inf.h_hat) : 0.0) << "\n";
    }
    if (!trace.empty()) {
        std::ofstream os(trace, std::ios::trunc);
        if (!os) throw IoError("cannot write '" + trace + "'");
        os << "step,t,nmse_db\n";
        for (std::size_t k = 0; k < inf.trace.states.size(); ++k) {
            const double db = d.blocked(i) ? std::numeric_limits<double>::quiet_NaN()
                                           : nmse(s.channel, state_to_channel(inf.trace.states[k])).db;
            os << k << ',' << io::fmt_double(static_cast<double>(k) * inf.trace.h) << ',' << io::fmt_double(db) << '\n';
        }
    }
    return kExitOk;
}

inline int cmd_benchmark(const io::json& cfg, const std::string& data_path, const std::string& ckpt, const std::string& out_dir,
                         std::ostream& out, std::ostream& err) {
    const BenchConfig bc = bench_config(cfg);
    const Dataset d = load_dataset(data_path);
    std::unique_ptr<FlowModel> model;
    std::string load_error;
    try {
        model = load_model(ckpt);
    } catch (const Error& e) {
        load_error = e.what();
    }
    const auto t0 = std::chrono::steady_clock::now();
    Report r = run_benchmark(d, model.get(), bc);
    if (!load_error.empty() && r.errors.count("flow")) r.errors["flow"] = load_error;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(r, out_dir,
                 {{"dataset", data_path}, {"dataset_hash", io::content_hash(data_path)}, {"checkpoints", ckpt}, {"seconds", seconds}});
    detail::write_json((std::filesystem::path(out_dir) / "manifest.json").string(),
                       {{"command", "benchmark"}, {"config", cfg}, {"dataset", data_path}, {"checkpoints", ckpt}});
    for (const auto& a : r.aggregates) {
        out << a.method << ' ' << a.var << '=' << io::fmt_double(a.value) << " nmse_db " << io::fmt_double(a.nmse_db) << " cossim "
            << io::fmt_double(a.cossim) << " se " << io::fmt_double(a.se) << "\n";
    }
    for (const auto& [m, why] : r.errors) err << "skipped " << m << ": " << why << "\n";
    return r.aggregates.empty() ? kExitRuntime : kExitOk;
}

// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Cross-modal flow-matching channel inference toolkit"};
    app.require_subcommand(1);
    std::string config;
    std::vector<std::string> sets;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config, "run configuration (JSON)");
        sub->add_option("--set", sets, "override a config key, e.g. --set train.epochs=50");
    };

    std::string out_path, data_path, ckpt, trace, sweep;
    long long index = 0;
    std::size_t K = 0;
    bool quiet = false;

    auto* gen = app.add_subcommand("generate-data", "generate a paired sensing/channel dataset");
    add_common(gen);
    gen->add_option("-o,--out", out_path, "dataset file (default paths.data)");

    auto* tr = app.add_subcommand("train", "train encoder and velocity field");
    add_common(tr);
    tr->add_option("-d,--data", data_path, "dataset file (default paths.data)");
    tr->add_option("-o,--out", out_path, "checkpoint directory (default paths.checkpoints)");
    tr->add_option("--epochs", K, "override train.epochs");
    tr->add_flag("-q,--quiet", quiet, "no per-epoch progress");

    auto* inf = app.add_subcommand("infer", "infer one sample's channel");
    add_common(inf);
    inf->add_option("--ckpt", ckpt, "checkpoint directory (default paths.checkpoints)");
    inf->add_option("-d,--data", data_path, "dataset file (default paths.data)");
    inf->add_option("--index", index, "sample index")->required();
    inf->add_option("--K", K, "integration steps (default infer.K)");
    inf->add_option("--trace", trace, "write per-step NMSE CSV here");

    auto* bench = app.add_subcommand("benchmark", "run the method comparison sweep");
    add_common(bench);
    bench->add_option("-d,--data", data_path, "dataset file (default paths.data)");
    bench->add_option("--ckpt", ckpt, "checkpoint directory (default paths.checkpoints)");
    bench->add_option("--sweep", sweep, "snr or tca (default eval.sweep)");
    bench->add_option("-o,--out", out_path, "report directory (default paths.out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        io::json cfg = detail::resolve(config, sets);
        auto path_or = [&](const std::string& given, const char* key) {
            return given.empty() ? cfg.at("paths").at(key).get<std::string>() : given;
        };
        if (*gen) return cmd_generate(cfg, path_or(out_path, "data"), out);
        if (*tr) {
            if (K > 0) cfg["train"]["epochs"] = K;
            return cmd_train(cfg, path_or(data_path, "data"), path_or(out_path, "checkpoints"), quiet, out);
        }
        if (*inf) {
            const std::size_t steps = K > 0 ? K : cfg.at("infer").at("K").get<std::size_t>();
            return cmd_infer(path_or(ckpt, "checkpoints"), path_or(data_path, "data"), index, steps, trace, out);
        }
        if (*bench) {
            if (!sweep.empty()) cfg = apply_overrides(cfg, {"eval.sweep=\"" + sweep + "\""});
            return cmd_benchmark(cfg, path_or(data_path, "data"), path_or(ckpt, "checkpoints"), path_or(out_path, "out"), out, err);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace xfcsi::cli
