// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "xfcsi/baselines.hpp"

using namespace xfcsi;
using Catch::Approx;

namespace {

ChannelMatrix random_channel(int n_ue, int n_bs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    ChannelMatrix h = ChannelMatrix::zeros(n_ue, n_bs);
    for (int r = 0; r < n_ue; ++r)
        for (int c = 0; c < n_bs; ++c) h.entries(r, c) = {g(rng), g(rng)};
    return h;
}

PilotConfig noiseless() {
    PilotConfig p;
    p.snr_db = std::numeric_limits<double>::infinity();
    return p;
}

KnnEntry entry(Vec2 loc, double gain, double aod, double aoa) {
    KnnEntry e;
    e.location = loc;
    e.paths = strongest_paths({PathParam{cd(gain, 0.0), aod, aoa, 10.0, PathType::los}});
    return e;
}

}  // namespace

TEST_CASE("pilot accounting", "[baselines]") {
    PilotConfig p;
    CHECK(p.pilot_count() == 168);
    p.t_acq = 1.25e-3;
    CHECK(p.pilot_count() == 28);
    p.t_acq = 0.9e-3;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("pilot observations", "[baselines]") {
    const ChannelMatrix h = random_channel(4, 16, 1);
    const auto o = simulate_pilots(h, noiseless(), 2);
    REQUIRE(o.y.size() == 168);
    CHECK(o.noise_var == 0.0);
    const CMatrix fu = dft_matrix(4).entries, fb = dft_matrix(16).entries;
    for (int t = 0; t < 168; ++t) {
        const cd direct = (fu.col(o.w_index[t]).adjoint() * h.entries * fb.col(o.f_index[t]))(0, 0);
        CHECK(std::abs(o.y(t) - direct) < 1e-12);
    }
    CHECK_THROWS_AS(simulate_pilots(to_angular(h), noiseless(), 2), DomainError);

    // Noise power matches the requested SNR.
    PilotConfig p;
    p.snr_db = 0.0;
    const auto noisy = simulate_pilots(h, p, 3);
    CHECK(noisy.noise_var == Approx(o.y.squaredNorm() / 168.0).epsilon(1e-12));
}

TEST_CASE("least squares", "[baselines]") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ChannelMatrix h = random_channel(4, 16, 10 + s);
        bool deficient = true;
        const auto est = ls_estimate(simulate_pilots(h, noiseless(), s), &deficient);
        CHECK_FALSE(deficient);
        CHECK(nmse(h, est).db < -80.0);
    }

    PilotObservation zero = simulate_pilots(random_channel(4, 16, 1), noiseless(), 1);
    zero.y.setZero();
    CHECK(ls_estimate(zero).entries.norm() == 0.0);

    // 2x2 channel, four pilots: normal equations solved independently.
    PilotObservation o;
    o.n_ue = o.n_bs = 2;
    o.A = pilot_matrix(2, 2, 4);
    o.y = CVector(4);
    o.y << cd(1, 2), cd(-0.5, 0.3), cd(0.2, -1), cd(3, 0.1);
    const CVector ref = (o.A.adjoint() * o.A).partialPivLu().solve(o.A.adjoint() * o.y);
    CHECK((vec(ls_estimate(o)) - ref).norm() < 1e-8);

    // Fewer pilots than unknowns: the minimum-norm solution fits y exactly and
    // lies in the row space of A.
    PilotConfig few = noiseless();
    few.t_acq = 1.25e-3;
    const auto u = simulate_pilots(random_channel(4, 16, 1), few, 1);
    const CVector x = vec(ls_estimate(u));
    CHECK((u.A * x - u.y).norm() < 1e-10 * u.y.norm());
    const CVector coeff = (u.A * u.A.adjoint()).partialPivLu().solve(u.y);
    CHECK((x - u.A.adjoint() * coeff).norm() < 1e-10 * x.norm());
}

TEST_CASE("soft threshold", "[baselines]") {
    CHECK(soft_threshold(cd(3, 4), 1.0) == cd(3, 4) * 0.8);
    CHECK(soft_threshold(cd(0.3, 0.4), 0.5) == cd(0, 0));
    CHECK(soft_threshold(cd(0.3, 0.4), 0.0) == cd(0.3, 0.4));
    const cd z = soft_threshold(cd(-2, 1), 0.5);
    CHECK(std::arg(z) == Approx(std::arg(cd(-2, 1))).margin(1e-15));
}

TEST_CASE("lasso", "[baselines]") {
    PilotConfig p;
    p.snr_db = 10.0;
    const ChannelMatrix h = random_channel(4, 16, 4);
    const auto o = simulate_pilots(h, p, 5);

    LassoOptions opt;
    opt.max_iter = 20000;
    opt.tol = 1e-14;
    const auto zero_reg = lasso_estimate(o, 0.0, opt);
    CHECK((zero_reg.h.entries - ls_estimate(o).entries).norm() / ls_estimate(o).entries.norm() < 1e-4);

    const auto off = lasso_estimate(o, lasso_lambda_max(o) * 1.0001);
    CHECK(off.h.entries.norm() == 0.0);
    CHECK_THROWS_AS(lasso_estimate(o, -1.0), ConfigError);

    PilotObservation empty = o;
    empty.y.setZero();
    CHECK(lasso_estimate(empty, 0.1).h.entries.norm() == 0.0);
}

TEST_CASE("ISTA objective is monotone", "[baselines]") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> lam(0.01, 0.3), snr(0.0, 20.0);
    for (int inst = 0; inst < 20; ++inst) {
        PilotConfig p;
        p.snr_db = snr(rng);
        const auto o = simulate_pilots(random_channel(4, 16, 100 + inst), p, 200 + inst);
        LassoOptions opt;
        opt.max_iter = 500;
        opt.tol = 0.0;
        const auto r = lasso_estimate(o, lam(rng) * lasso_lambda_max(o), opt);
        REQUIRE(r.objective.size() == 501);
        for (std::size_t k = 1; k < r.objective.size(); ++k) {
            INFO("instance " << inst << " step " << k);
            CHECK(r.objective[k] <= r.objective[k - 1] * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("circular mean", "[baselines]") {
    const double deg = kPi / 180.0;
    CHECK(std::abs(wrap_angle(circular_mean({179 * deg, -179 * deg}) - kPi)) < 1e-12);
    CHECK(circular_mean({10 * deg, 30 * deg}) == Approx(20 * deg).epsilon(1e-12));
    CHECK(circular_mean({0.0, 1.0}, {1.0, 0.0}) == Approx(0.0).margin(1e-15));
    CHECK(circular_mean({0.0, kPi}) == Approx(kPi / 2).margin(1e-12));  // sin sum is tiny but positive
    CHECK(circular_mean({}) == 0.0);
}

TEST_CASE("strongest paths and placeholders", "[baselines]") {
    std::vector<PathParam> p{{cd(0.1, 0), 0.1, 0.1, 1, PathType::scatter},
                             {cd(0, 2), 0.2, 0.2, 1, PathType::los},
                             {cd(-1, 0), 0.3, 0.3, 1, PathType::reflection},
                             {cd(0.5, 0), 0.4, 0.4, 1, PathType::reflection}};
    const auto s = strongest_paths(p);
    CHECK(s[0].aod == 0.2);
    CHECK(s[1].aod == 0.3);
    CHECK(s[2].aod == 0.4);
    const auto pad = strongest_paths({p[0]});
    CHECK(pad[1].gain == cd(0, 0));
    CHECK(pad[2].gain == cd(0, 0));
    // A placeholder slot contributes no angle to the average.
    const auto avg = average_paths({strongest_paths({p[1], p[2]}), strongest_paths({p[1]})});
    CHECK(avg[1].aod == Approx(0.3).epsilon(1e-12));
    CHECK(avg[1].gain == cd(-0.5, 0));
}

TEST_CASE("knn on a dataset", "[baselines]") {
    DatasetConfig cfg;
    cfg.scene.users = 30;
    cfg.scene.image_size = 8;
    cfg.scene.points = 8;
    const Dataset d = generate_dataset(cfg);
    std::vector<std::size_t> rows(d.count);
    std::iota(rows.begin(), rows.end(), 0);
    const KnnDatabase db = knn_build(d, rows);
    REQUIRE(db.entries.size() == 30);
    for (const auto& e : db.entries) {
        const ChannelMatrix stored = paths_channel(e.paths, db.n_bs, db.n_ue);
        CHECK(knn_infer(db, e.location, 1).entries == stored.entries);
    }
    bool clamped = false;
    knn_infer(db, {0, 0}, 100, &clamped);
    CHECK(clamped);
    CHECK_THROWS_AS(knn_query(db, {0, 0}, 0), ConfigError);
    CHECK_THROWS_AS(knn_query(KnnDatabase{}, {0, 0}, 1), ContractError);
}

TEST_CASE("knn weighting", "[baselines]") {
    KnnDatabase db;
    db.n_ue = 4;
    db.n_bs = 16;
    db.entries = {entry({-1, 0}, 1.0, 0.2, 0.1), entry({1, 0}, 3.0, 0.4, 0.3), entry({10, 10}, 5.0, 1.0, 1.0)};
    const auto q = knn_query(db, {0, 0}, 2);
    CHECK(q.weights == std::vector<double>{0.5, 0.5});
    CHECK(q.paths[0].gain == cd(2.0, 0.0));
    CHECK(q.paths[0].aod == Approx(0.3).epsilon(1e-12));

    // k = 3 against a direct inverse-distance reimplementation.
    const Vec2 at{2.0, 1.0};
    const auto r = knn_query(db, at, 3);
    double w[3], ws = 0;
    for (int i = 0; i < 3; ++i) ws += w[i] = 1.0 / (db.entries[i].location - at).norm();
    cd g = 0;
    double s = 0, c = 0;
    for (int i = 0; i < 3; ++i) {
        g += w[i] / ws * db.entries[i].paths[0].gain;
        s += w[i] / ws * std::sin(db.entries[i].paths[0].aod);
        c += w[i] / ws * std::cos(db.entries[i].paths[0].aod);
    }
    CHECK(std::abs(r.paths[0].gain - g) < 1e-8);
    CHECK(r.paths[0].aod == Approx(std::atan2(s, c)).margin(1e-8));
    // Placeholder slots stay empty.
    CHECK(r.paths[1].gain == cd(0, 0));
}
