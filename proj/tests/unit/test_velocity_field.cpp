// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "test_util.hpp"
#include "xfcsi/velocity_field.hpp"

using namespace xfcsi;
using namespace xfcsi::nn;
using testutil::randn;

namespace {

UNetConfig small_unet(std::size_t depth = 2) {
    UNetConfig c;
    c.n_ue = 4;
    c.n_bs = 8;
    c.depth = depth;
    c.base_channels = 3;
    c.time_dim = 8;
    return c;
}

double sq_norm(const Tensor<double>& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return s;
}

}  // namespace

TEST_CASE("velocity field preserves the state shape", "[velocity]") {
    for (auto [ue, bs, depth] : {std::tuple{4u, 16u, 2u}, std::tuple{4u, 16u, 1u}, std::tuple{8u, 8u, 3u}, std::tuple{2u, 4u, 1u}}) {
        UNetConfig c;
        c.n_ue = ue;
        c.n_bs = bs;
        c.depth = depth;
        c.base_channels = 4;
        c.time_dim = 8;
        VelocityField<float> f(c);
        const auto x = randn<float>({2, ue, bs}, 1);
        CHECK(f.velocity(x, 0.5).shape() == x.shape());
        const auto xb = randn<float>({3, 2, ue, bs}, 2);
        CHECK(f.velocity_batch(xb, 0.2).shape() == xb.shape());
    }
}

TEST_CASE("velocity field validates inputs", "[velocity]") {
    VelocityField<double> f(small_unet());
    CHECK_THROWS_AS(f.velocity(randn({2, 4, 4}, 1), 0.5), ShapeError);
    CHECK_THROWS_AS(f.velocity(randn({2, 4, 8}, 1), 1.5), DomainError);
    CHECK_THROWS_AS(f.velocity(randn({2, 4, 8}, 1), -0.1), DomainError);
    CHECK_THROWS_AS(f.forward(Var<double>::constant(randn({2, 2, 4, 8}, 1)), {0.1}), ShapeError);
    auto bad = small_unet(3);  // 4 is not divisible by 2^3
    CHECK_THROWS_AS(VelocityField<double>(bad), ConfigError);
}

TEST_CASE("time conditioning is live", "[velocity]") {
    VelocityField<double> f(UNetConfig{}, 4);  // desk defaults
    const auto x = randn({2, 4, 16}, 5);
    const auto a = f.velocity(x, 0.3), b = f.velocity(x, 0.7);
    CHECK_FALSE(a == b);
    // Finite-difference sensitivity in t.
    const double h = 1e-6;
    const auto up = f.velocity(x, 0.5 + h), dn = f.velocity(x, 0.5 - h);
    double dv = 0.0;
    for (std::size_t i = 0; i < up.numel(); ++i) dv += (up[i] - dn[i]) * (up[i] - dn[i]);
    CHECK(std::sqrt(dv) / (2 * h) > 0.0);
}

TEST_CASE("velocity field is deterministic in its seed", "[velocity]") {
    VelocityField<double> a(small_unet(), 3), b(small_unet(), 3), c(small_unet(), 4);
    const auto x = randn({2, 4, 8}, 1);
    CHECK(a.velocity(x, 0.4) == b.velocity(x, 0.4));
    CHECK_FALSE(a.velocity(x, 0.4) == c.velocity(x, 0.4));
    // Batched and single evaluation agree.
    const auto xb = x.reshaped({1, 2, 4, 8});
    CHECK(a.velocity_batch(xb, 0.4).values() == a.velocity(x, 0.4).values());
}

TEST_CASE("velocity field parameter gradients", "[velocity][grad]") {
    for (std::size_t depth : {1u, 2u}) {
        VelocityField<double> f(small_unet(depth), 9);
        auto params = f.parameters();
        const Var<double> x = Var<double>::constant(randn({2, 2, 4, 8}, 10));
        const std::vector<double> t{0.25, 0.8};
        const double err = testutil::param_gradcheck<double>(params, [&] { return nn::sum(nn::square(f.forward(x, t))); }, 1e-6);
        INFO("depth " << depth);
        CHECK(err < 1e-4);
    }

    // Single precision: h = 1e-3, rel. err < 1e-2 pooled over all parameters.
    VelocityField<float> ff(small_unet(), 11);
    auto pf = ff.parameters();
    const Var<float> xf = Var<float>::constant(randn<float>({1, 2, 4, 8}, 12));
    const double errf = testutil::param_gradcheck<float>(pf, [&] { return nn::sum(nn::square(ff.forward(xf, {0.6}))); }, 1e-3, 0, true);
    CHECK(errf < 1e-2);
}

TEST_CASE("input gradient of the field", "[velocity][grad]") {
    VelocityField<double> f(small_unet(), 13);
    const double err = testutil::gradcheck<double>({randn({2, 2, 4, 8}, 14)}, [&](const std::vector<Var<double>>& v) {
        return testutil::probe(f.forward(v[0], {0.1, 0.9}), 15);
    }, 1e-6);
    CHECK(err < 1e-4);
    CHECK(sq_norm(f.velocity(randn({2, 4, 8}, 16), 0.0)) > 0.0);
}
