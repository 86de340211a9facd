// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "xfcsi/cli.hpp"

using namespace xfcsi;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "xfcsi");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Small scene and model so the whole pipeline runs in seconds.
const std::vector<std::string> kSmall = {
    "--set", "scene.users=20",          "--set", "scene.image_size=16",        "--set", "scene.points=32",
    "--set", "train.epochs=2",          "--set", "train.batch_size=8",         "--set", "train.eval_every=1",
    "--set", "train.encoder.cnn_base=4", "--set", "train.encoder.point_widths=[8,8,16]",
    "--set", "train.encoder.embed_dim=16", "--set", "train.encoder.feature_dim=16", "--set", "train.encoder.heads=2",
    "--set", "train.unet.base_channels=8", "--set", "train.unet.time_dim=16",  "--set", "eval.lasso_grid=[0.01,0.1]",
    "--set", "eval.lasso_validation=4", "--set", "eval.lasso_max_iter=50",     "--set", "train.test_fraction=0.25",
};

std::vector<std::string> with_small(std::vector<std::string> args) {
    args.insert(args.end(), kSmall.begin(), kSmall.end());
    return args;
}

std::string field(const std::string& text, const std::string& key) {
    std::istringstream is(text);
    std::string k, v;
    while (is >> k >> v)
        if (k == key) return v;
    return {};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("usage and config errors exit with code 2", "[cli]") {
    const auto bad = run_cli({"generate-data", "--set", "scene.colour=3"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("scene.colour") != std::string::npos);
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"teleport"}).code == 2);
    CHECK(run_cli({"infer"}).code == 2);  // --index is required

    const auto dir = testutil::scratch_dir("cli_cfg");
    {
        std::ofstream os(dir / "c.json");
        os << R"({"train": {"epochs": 3, "warmup": 1}})";
    }
    const auto file = run_cli({"generate-data", "-c", (dir / "c.json").string()});
    CHECK(file.code == 2);
    CHECK(file.err.find("train.warmup") != std::string::npos);
}

TEST_CASE("generate, train, infer and benchmark", "[cli][pipeline]") {
    const auto dir = testutil::scratch_dir("cli");
    const std::string data = (dir / "d.xfd").string(), ckpt = (dir / "ckpt").string(), out = (dir / "bench").string();

    const auto g1 = run_cli(with_small({"generate-data", "-o", data}));
    REQUIRE(g1.code == 0);
    CHECK(field(g1.out, "samples") == "100");
    const auto g2 = run_cli(with_small({"generate-data", "-o", (dir / "d2.xfd").string()}));
    CHECK(field(g1.out, "content_hash") == field(g2.out, "content_hash"));
    CHECK_FALSE(field(g1.out, "content_hash").empty());
    CHECK(std::filesystem::exists(data + ".manifest.json"));

    const auto t = run_cli(with_small({"train", "-d", data, "-o", ckpt, "-q"}));
    REQUIRE(t.code == 0);
    CHECK(std::filesystem::exists(std::filesystem::path(ckpt) / kEncoderCheckpoint));
    CHECK(std::filesystem::exists(std::filesystem::path(ckpt) / kVelocityCheckpoint));
    CHECK(read_csv(std::filesystem::path(ckpt) / "history.csv").size() == 3);  // header + 2 epochs

    const std::string trace = (dir / "trace.csv").string();
    const auto i1 = run_cli({"infer", "--ckpt", ckpt, "-d", data, "--index", "7", "--K", "4", "--trace", trace});
    REQUIRE(i1.code == 0);
    CHECK(read_csv(trace).size() == 1 + 5);
    const auto i2 = run_cli({"infer", "--ckpt", ckpt, "-d", data, "--index", "7", "--K", "4"});
    CHECK(i1.out == i2.out);
    CHECK(run_cli({"infer", "--ckpt", ckpt, "-d", data, "--index", "100"}).code == 2);
    CHECK(run_cli({"infer", "--ckpt", ckpt, "-d", data, "--index", "-1"}).code == 2);
    CHECK(run_cli({"infer", "--ckpt", ckpt, "-d", (dir / "none.xfd").string(), "--index", "0"}).code == 1);

    const auto b = run_cli(with_small({"benchmark", "-d", data, "--ckpt", ckpt, "--sweep", "snr", "-o", out}));
    REQUIRE(b.code == 0);
    const auto rows = read_csv(std::filesystem::path(out) / "results.csv");
    REQUIRE(rows.size() == 1 + 20);
    io::json report;
    {
        std::ifstream is(std::filesystem::path(out) / "report.json");
        is >> report;
    }
    REQUIRE(report.at("aggregates").size() == 20);
    for (std::size_t k = 0; k < 20; ++k) {
        const auto& a = report["aggregates"][k];
        CHECK(rows[k + 1][0] == a["method"].get<std::string>());
        CHECK(std::abs(std::stod(rows[k + 1][3]) - a["nmse_db"].get<double>()) < 1e-9);
        CHECK(std::abs(std::stod(rows[k + 1][4]) - a["cossim"].get<double>()) < 1e-9);
        CHECK(std::abs(std::stod(rows[k + 1][5]) - a["se"].get<double>()) < 1e-9);
    }
    const auto samples = read_csv(std::filesystem::path(out) / "samples.csv");
    REQUIRE(samples.size() > 1);
    for (std::size_t k = 1; k < samples.size(); ++k) {
        const int frame = std::stoi(samples[k][5]);
        CHECK(frame >= 2);
        CHECK(frame <= 5);
    }

    // A missing checkpoint skips the flow method but the run still succeeds.
    const auto nf = run_cli(with_small({"benchmark", "-d", data, "--ckpt", (dir / "nothing").string(), "-o", (dir / "b2").string()}));
    CHECK(nf.code == 0);
    CHECK(nf.err.find("skipped flow") != std::string::npos);
}
