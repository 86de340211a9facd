// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "xfcsi/evalbench.hpp"

using namespace xfcsi;
using Catch::Approx;

namespace {

ChannelMatrix grid_channel(int wi, int fi, cd g) {
    const CMatrix fu = dft_matrix(4).entries, fb = dft_matrix(16).entries;
    ChannelMatrix h = ChannelMatrix::zeros(4, 16);
    h.entries = g * fu.col(wi) * fb.col(fi).adjoint();
    return h;
}

}  // namespace

TEST_CASE("beam search on the DFT grid", "[evalbench]") {
    for (int wi : {0, 1, 3})
        for (int fi : {0, 5, 15}) {
            const auto b = beam_search(grid_channel(wi, fi, cd(0.3, -2.0)));
            CHECK(b.w_index == wi);
            CHECK(b.f_index == fi);
            CHECK_FALSE(b.fallback);
        }
    const auto z = beam_search(ChannelMatrix::zeros(4, 16));
    CHECK(z.fallback);
    CHECK(z.w_index == 0);
    CHECK(z.f_index == 0);
    CHECK_THROWS_AS(beam_search(to_angular(grid_channel(0, 0, 1.0))), DomainError);
}

TEST_CASE("beam search matches brute force and is scale invariant", "[evalbench]") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    const CMatrix fu = dft_matrix(4).entries, fb = dft_matrix(16).entries;
    for (int trial = 0; trial < 20; ++trial) {
        ChannelMatrix h = ChannelMatrix::zeros(4, 16);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 16; ++c) h.entries(r, c) = {g(rng), g(rng)};
        double best = -1;
        int bw = -1, bf = -1;
        for (int wi = 0; wi < 4; ++wi)
            for (int fi = 0; fi < 16; ++fi) {
                const double v = std::abs((fu.col(wi).adjoint() * h.entries * fb.col(fi))(0, 0));
                if (v > best) best = v, bw = wi, bf = fi;
            }
        const auto b = beam_search(h);
        CHECK(b.w_index == bw);
        CHECK(b.f_index == bf);
        ChannelMatrix scaled = h;
        scaled.entries *= cd(0.0, 7.5);
        const auto s = beam_search(scaled);
        CHECK(s.w_index == bw);
        CHECK(s.f_index == bf);
    }
    // Equal gains: lowest (w, f) wins.
    ChannelMatrix tie = grid_channel(2, 3, 1.0);
    tie.entries += grid_channel(1, 9, 1.0).entries;
    const auto t = beam_search(tie);
    CHECK(t.w_index == 1);
    CHECK(t.f_index == 9);
}

TEST_CASE("spectral efficiency", "[evalbench]") {
    const ChannelMatrix h = grid_channel(1, 2, 1.0);
    const CMatrix fu = dft_matrix(4).entries, fb = dft_matrix(16).entries;
    CHECK(instantaneous_se(fu.col(0), fb.col(0), h, 10.0) == Approx(0.0).margin(1e-12));
    CHECK(instantaneous_se(fu.col(1), fb.col(2), h, 1.0) == Approx(1.0).epsilon(1e-12));
    CHECK(instantaneous_se(fu.col(1), fb.col(2), h, 10.0) == Approx(std::log2(11.0)).epsilon(1e-12));
    CHECK(db_to_linear(10.0) == Approx(10.0).epsilon(1e-15));
}

TEST_CASE("frame accounting", "[evalbench]") {
    FrameAccounting a;
    CHECK(a.gps_overhead() == Approx(0.10667).margin(5e-6));
    CHECK(a.gps_overhead() == Approx(128.0 / 1200.0).epsilon(1e-12));
    CHECK(pilot_based_se(4.0, a) == Approx(3.0).epsilon(1e-12));
    CHECK(sensing_aided_se(5.0, 5.0, a) == Approx(5.0 - 0.10667).margin(5e-6));
    CHECK(sensing_aided_se(0.0, 4.0, a) == Approx(3.0 - 128.0 / 1200.0).epsilon(1e-12));
    a.t_acq = 0.02;
    CHECK_THROWS_AS(pilot_based_se(1.0, a), ConfigError);
}

TEST_CASE("benchmark structure", "[evalbench]") {
    auto dc = testutil::tiny_dataset_config(30);
    const Dataset d = generate_dataset(dc);
    BenchConfig cfg;
    cfg.snr_db = {0, 20};
    cfg.lasso_grid = {0.01, 0.1};
    cfg.lasso_validation = 8;
    cfg.lasso_max_iter = 50;
    const FlowModel model(testutil::tiny_model_config(dc));
    const Report rep = run_benchmark(d, &model, cfg);
    REQUIRE(rep.aggregates.size() == 8);
    CHECK(rep.errors.empty());

    const Split split = split_by_user(d, cfg.test_fraction, cfg.split_seed);
    std::size_t scored = 0;
    for (auto i : split.test) scored += d.frame_indices[i] != 0 && !d.blocked(i);
    for (const auto& a : rep.aggregates) {
        CHECK(a.count == scored);
        CHECK(a.nmse_db == Approx(10 * std::log10(a.nmse_linear)).margin(1e-12));
        CHECK(std::isnan(a.lasso_lambda) == (a.method != "lasso"));
    }
    CHECK(rep.samples.size() == 8 * scored);
    for (const auto& s : rep.samples) {
        CHECK(s.frame >= 2);
        CHECK(s.frame <= 5);
    }
    // LS improves with SNR on the same pilots.
    CHECK(rep.aggregates[2].method == "ls");
    CHECK(rep.aggregates[3].nmse_db < rep.aggregates[2].nmse_db);

    const Report again = run_benchmark(d, &model, cfg);
    for (std::size_t k = 0; k < rep.samples.size(); ++k) CHECK(rep.samples[k].nmse_linear == again.samples[k].nmse_linear);

    const Report noflow = run_benchmark(d, nullptr, cfg);
    CHECK(noflow.errors.contains("flow"));
    CHECK(noflow.aggregates.size() == 6);

    auto bad = cfg;
    bad.methods = {"music"};
    CHECK_THROWS_AS(run_benchmark(d, nullptr, bad), ConfigError);
}

TEST_CASE("tca sweep pairs K with the acquisition time", "[evalbench]") {
    BenchConfig cfg;
    cfg.sweep = Sweep::tca;
    const auto pts = sweep_points(cfg);
    REQUIRE(pts.size() == 4);
    CHECK(pts[0].tca_ms == 1.25);
    CHECK(pts[0].flow_K == 2);
    CHECK(pts[3].flow_K == 7);
    CHECK(pts[1].snr_db == 10.0);
    cfg.tca_K = {2, 3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
