// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "test_util.hpp"
#include "xfcsi/nn/adam.hpp"
#include "xfcsi/nn/checkpoint.hpp"
#include "xfcsi/nn/layers.hpp"

using namespace xfcsi;
using namespace xfcsi::nn;
using testutil::gradcheck;
using testutil::probe;
using testutil::randn;
using Catch::Approx;

namespace {

constexpr int kPoints = 10;  // random points per layer type
constexpr double kTol = 1e-4;
constexpr double kStep = 1e-6;

using VD = Var<double>;
using TD = Tensor<double>;

void check_layer(const char* name, const std::function<std::vector<TD>(std::uint64_t)>& inputs,
                 const testutil::Builder<double>& f) {
    for (int p = 0; p < kPoints; ++p) {
        const auto xs = inputs(1000 + p);
        const double err = gradcheck<double>(xs, f, kStep);
        INFO(name << " point " << p << " rel err " << err);
        CHECK(err < kTol);
    }
}

TD positive(Shape s, std::uint64_t seed) {
    TD t = randn(std::move(s), seed);
    for (auto& v : t.values()) v = 0.5 + std::abs(v);
    return t;
}

// Direct same-padded strided cross-correlation.
TD conv2d_oracle(const TD& x, const TD& w, const TD& b, int stride) {
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k / 2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    TD out({n, co, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    double acc = b[o];
                    for (std::size_t c = 0; c < ci; ++c)
                        for (std::size_t a = 0; a < k; ++a)
                            for (std::size_t e = 0; e < k; ++e) {
                                const long y = static_cast<long>(i) * stride + static_cast<long>(a) - pad;
                                const long xx = static_cast<long>(j) * stride + static_cast<long>(e) - pad;
                                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                                acc += w[((o * ci + c) * k + a) * k + e] * x[((s * ci + c) * h + y) * wd + xx];
                            }
                    out[((s * co + o) * ho + i) * wo + j] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("tensor basics", "[nn]") {
    TD t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(TD({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("linear forward", "[nn]") {
    const VD x = VD::constant(TD({2}, {1, 2}));
    CHECK(linear(x, VD::constant(TD({1, 2}, {1, 1})), VD::constant(TD({1}, {1}))).value()[0] == 4.0);

    const TD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const TD v({3}, {0.5, -2, 7});
    CHECK(linear(VD::constant(v), VD::constant(eye), VD::constant(TD({3}))).value() == v);

    const TD xb = randn({5, 7}, 1), w = randn({4, 7}, 2), b = randn({4}, 3);
    const TD y = linear(VD::constant(xb), VD::constant(w), VD::constant(b)).value();
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < 7; ++i) acc += w[o * 7 + i] * xb[s * 7 + i];
            CHECK(y[s * 4 + o] == Approx(acc).margin(1e-12));
        }
}

TEST_CASE("conv2d forward", "[nn]") {
    // 1x1 identity kernel
    const TD x = randn({1, 3, 5, 5}, 4);
    TD eye({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
    CHECK(conv2d(VD::constant(x), VD::constant(eye), VD::constant(TD({3})), 1).value() == x);

    const TD x4 = randn({1, 1, 4, 4}, 5);
    const auto y = conv2d(VD::constant(x4), VD::constant(randn({1, 1, 3, 3}, 6)), VD::constant(TD({1})), 2).value();
    CHECK(y.shape() == Shape{1, 1, 2, 2});

    for (int stride : {1, 2}) {
        const TD xi = randn({2, 3, 6, 8}, 7), w = randn({4, 3, 3, 3}, 8), b = randn({4}, 9);
        const TD got = conv2d(VD::constant(xi), VD::constant(w), VD::constant(b), stride).value();
        const TD ref = conv2d_oracle(xi, w, b, stride);
        REQUIRE(got.shape() == ref.shape());
        for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(got[i] == Approx(ref[i]).margin(1e-10));
    }
    CHECK_THROWS_AS(conv2d(VD::constant(x), VD::constant(eye), VD::constant(TD({3})), 3), ConfigError);
}

TEST_CASE("conv1d and global maxpool", "[nn]") {
    const TD pts = randn({1, 3, 9}, 10);
    TD eye({3, 3});
    for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
    CHECK(conv1d(VD::constant(pts), VD::constant(eye), VD::constant(TD({3}))).value() == pts);

    // Per-point matmul oracle and permutation equivariance.
    const TD w = randn({5, 3}, 11), b = randn({5}, 12);
    const TD y = conv1d(VD::constant(pts), VD::constant(w), VD::constant(b)).value();
    for (std::size_t o = 0; o < 5; ++o)
        for (std::size_t u = 0; u < 9; ++u) {
            double acc = b[o];
            for (std::size_t c = 0; c < 3; ++c) acc += w[o * 3 + c] * pts[c * 9 + u];
            CHECK(y[o * 9 + u] == Approx(acc).margin(1e-12));
        }
    std::vector<std::size_t> perm{3, 0, 8, 1, 7, 2, 6, 4, 5};
    TD permuted(pts.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t u = 0; u < 9; ++u) permuted[c * 9 + u] = pts[c * 9 + perm[u]];
    const TD yp = conv1d(VD::constant(permuted), VD::constant(w), VD::constant(b)).value();
    for (std::size_t o = 0; o < 5; ++o)
        for (std::size_t u = 0; u < 9; ++u) CHECK(yp[o * 9 + u] == y[o * 9 + perm[u]]);

    const auto pool = global_maxpool(VD::constant(pts)).value();
    const auto poolp = global_maxpool(VD::constant(permuted)).value();
    CHECK(pool == poolp);
    const TD one = randn({1, 4, 1}, 13);
    CHECK(global_maxpool(VD::constant(one)).value().values() == one.values());
}

TEST_CASE("sinusoidal embedding", "[nn]") {
    const auto z = sinusoidal_embed<double>(0.0, 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(z[i] == (i % 2 == 0 ? 0.0 : 1.0));
    const auto e = sinusoidal_embed<double>(1.0, 4);
    CHECK(e[0] == Approx(std::sin(1.0)).margin(1e-15));
    CHECK(e[1] == Approx(std::cos(1.0)).margin(1e-15));
    CHECK(e[2] == Approx(std::sin(1e-2)).margin(1e-15));
    CHECK(e[3] == Approx(std::cos(1e-2)).margin(1e-15));
    const auto r = sinusoidal_embed<float>(123.456, 64);
    for (std::size_t i = 0; i < 32; ++i) CHECK(r[2 * i] * r[2 * i] + r[2 * i + 1] * r[2 * i + 1] == Approx(1.0).margin(1e-6));
    CHECK_THROWS_AS(sinusoidal_embed<double>(1.0, 3), ConfigError);
}

TEST_CASE("attention fuse", "[nn]") {
    std::mt19937_64 rng(3);
    AttentionFuse<double> att("att", 8, 2, rng);
    const VD tok = VD::constant(randn({3, 8}, 14));

    // One token: the softmax weight is exactly 1.
    Tensor<double> w1;
    att({tok}, &w1);
    for (double v : w1.values()) CHECK(v == 1.0);

    // Zeroed value/output projections leave the residual identity.
    AttentionFuse<double> zero("z", 8, 2, rng);
    zero.v.weight.value().fill(0.0);
    zero.o.weight.value().fill(0.0);
    CHECK(zero({tok}).value().values() == tok.value().values());

    Tensor<double> w3;
    const VD a = VD::constant(randn({3, 8}, 15)), b = VD::constant(randn({3, 8}, 16));
    const auto out = att({tok, a, b}, &w3);
    CHECK(out.shape() == Shape{3, 24});
    REQUIRE(w3.shape() == Shape{3, 2, 3, 3});
    for (std::size_t r = 0; r < 3 * 2 * 3; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += w3[r * 3 + j];
        CHECK(s == Approx(1.0).margin(1e-12));
    }
    CHECK_THROWS_AS(AttentionFuse<double>("bad", 6, 4, rng), ConfigError);
}

TEST_CASE("backward basics", "[nn]") {
    const TD x = randn({6}, 17);
    VD leaf = VD::leaf(x);
    backward(sum(square(leaf)));
    for (std::size_t i = 0; i < 6; ++i) CHECK(leaf.grad()[i] == 2.0 * x[i]);

    std::mt19937_64 rng(1);
    Linear<double> used("used", 3, 2, rng), unused("unused", 3, 2, rng);
    backward(sum(used(VD::constant(randn({4, 3}, 18)))));
    const TD gw = unused.weight.grad(), gb = unused.bias.grad();
    for (double g : gw.values()) CHECK(g == 0.0);
    for (double g : gb.values()) CHECK(g == 0.0);
    CHECK_THROWS_AS(backward(used(VD::constant(randn({4, 3}, 18)))), ContractError);
}

// Central-difference checks in double precision for every differentiable op
// and layer, each at ten random points.
TEST_CASE("gradient checks: elementwise ops", "[nn][grad]") {
    const Shape s{3, 4};
    check_layer("add", [&](auto k) { return std::vector<TD>{randn(s, k), randn(s, k + 1)}; },
                [](const auto& v) { return probe(add(v[0], v[1]), 1); });
    check_layer("sub", [&](auto k) { return std::vector<TD>{randn(s, k), randn(s, k + 1)}; },
                [](const auto& v) { return probe(sub(v[0], v[1]), 2); });
    check_layer("mul", [&](auto k) { return std::vector<TD>{randn(s, k), randn(s, k + 1)}; },
                [](const auto& v) { return probe(mul(v[0], v[1]), 3); });
    check_layer("scale/add_scalar", [&](auto k) { return std::vector<TD>{randn(s, k)}; },
                [](const auto& v) { return probe(add_scalar(scale(v[0], 1.7), -0.3), 4); });
    check_layer("mul_scalar", [&](auto k) { return std::vector<TD>{randn(s, k), randn({1}, k + 1)}; },
                [](const auto& v) { return probe(mul_scalar(v[0], v[1]), 5); });
    check_layer("mul_rows", [&](auto k) { return std::vector<TD>{randn({3, 2, 2}, k), randn({3}, k + 1)}; },
                [](const auto& v) { return probe(mul_rows(v[0], v[1]), 6); });
    check_layer("add_channel_bias", [&](auto k) { return std::vector<TD>{randn({2, 3, 2, 2}, k), randn({2, 3}, k + 1)}; },
                [](const auto& v) { return probe(add_channel_bias(v[0], v[1]), 7); });
    check_layer("exp", [&](auto k) { return std::vector<TD>{randn(s, k, 0.5)}; },
                [](const auto& v) { return probe(nn::exp(v[0]), 8); });
    check_layer("log", [&](auto k) { return std::vector<TD>{positive(s, k)}; },
                [](const auto& v) { return probe(nn::log(v[0]), 9); });
    check_layer("square", [&](auto k) { return std::vector<TD>{randn(s, k)}; },
                [](const auto& v) { return probe(square(v[0]), 10); });
    check_layer("leaky_relu", [&](auto k) { return std::vector<TD>{randn(s, k)}; },
                [](const auto& v) { return probe(leaky_relu(v[0]), 11); });
    check_layer("sum/mean", [&](auto k) { return std::vector<TD>{randn(s, k)}; },
                [](const auto& v) { return add(sum(square(v[0])), mean(nn::exp(v[0]))); });
    check_layer("reshape/concat1", [&](auto k) { return std::vector<TD>{randn({2, 3, 4}, k), randn({2, 1, 4}, k + 1)}; },
                [](const auto& v) { return probe(reshape(concat1(std::vector<VD>{v[0], v[1]}), Shape{8, 4}), 12); });
}

TEST_CASE("gradient checks: layers", "[nn][grad]") {
    check_layer("linear", [](auto k) { return std::vector<TD>{randn({4, 5}, k), randn({3, 5}, k + 1), randn({3}, k + 2)}; },
                [](const auto& v) { return probe(linear(v[0], v[1], v[2]), 13); });
    check_layer("linear (vector)", [](auto k) { return std::vector<TD>{randn({5}, k), randn({3, 5}, k + 1), randn({3}, k + 2)}; },
                [](const auto& v) { return probe(linear(v[0], v[1], v[2]), 14); });
    for (int stride : {1, 2}) {
        check_layer(stride == 1 ? "conv2d s1" : "conv2d s2",
                    [](auto k) { return std::vector<TD>{randn({2, 2, 4, 6}, k), randn({3, 2, 3, 3}, k + 1), randn({3}, k + 2)}; },
                    [stride](const auto& v) { return probe(conv2d(v[0], v[1], v[2], stride), 15); });
    }
    check_layer("conv1d", [](auto k) { return std::vector<TD>{randn({2, 3, 7}, k), randn({4, 3}, k + 1), randn({4}, k + 2)}; },
                [](const auto& v) { return probe(conv1d(v[0], v[1], v[2]), 16); });
    check_layer("global_maxpool", [](auto k) { return std::vector<TD>{randn({2, 3, 9}, k)}; },
                [](const auto& v) { return probe(global_maxpool(v[0]), 17); });
    check_layer("upsample2x", [](auto k) { return std::vector<TD>{randn({1, 2, 2, 3}, k)}; },
                [](const auto& v) { return probe(upsample2x(v[0]), 18); });
    check_layer("attention_core",
                [](auto k) { return std::vector<TD>{randn({2, 3, 4}, k), randn({2, 3, 4}, k + 1), randn({2, 3, 4}, k + 2)}; },
                [](const auto& v) { return probe(attention_core(v[0], v[1], v[2], 2), 19); });
    check_layer("l2_normalize_rows", [](auto k) { return std::vector<TD>{randn({3, 5}, k)}; },
                [](const auto& v) { return probe(l2_normalize_rows(v[0]), 20); });
    check_layer("matmul_nt", [](auto k) { return std::vector<TD>{randn({3, 5}, k), randn({4, 5}, k + 1)}; },
                [](const auto& v) { return probe(matmul_nt(v[0], v[1]), 21); });
    check_layer("softmax_xent_diag", [](auto k) { return std::vector<TD>{randn({4, 4}, k, 2.0)}; },
                [](const auto& v) { return softmax_xent_diag(v[0]); });
}

TEST_CASE("gradient check: attention fuse projections", "[nn][grad]") {
    // Projection weights are fed in as inputs so that they are checked as well.
    for (int p = 0; p < kPoints; ++p) {
        std::vector<TD> xs{randn({2, 6}, 30 + p), randn({2, 6}, 40 + p), randn({2, 6}, 50 + p)};
        for (int j = 0; j < 4; ++j) xs.push_back(randn({6, 6}, 60 + 10 * p + j, 0.4));
        const double err = gradcheck<double>(xs, [](const std::vector<VD>& v) {
            const VD zero = VD::constant(TD({6}));
            std::vector<VD> parts;
            for (int t = 0; t < 3; ++t) parts.push_back(reshape(v[t], Shape{2, 1, 6}));
            const VD flat = reshape(concat1(parts), Shape{6, 6});
            auto proj = [&](const VD& w) { return reshape(linear(flat, w, zero), Shape{2, 3, 6}); };
            const VD att = attention_core(proj(v[3]), proj(v[4]), proj(v[5]), 3);
            const VD mixed = linear(reshape(att, Shape{6, 6}), v[6], zero);
            return probe(add(flat, mixed), 22);
        }, kStep);
        INFO("point " << p << " rel err " << err);
        CHECK(err < kTol);
    }
}

TEST_CASE("composite single-precision gradient check", "[nn][grad]") {
    // Finite differences in float with h = 1e-3, rel. err < 1e-2.
    using VF = Var<float>;
    const std::vector<Tensor<float>> xs{randn<float>({2, 2, 4, 4}, 70), randn<float>({3, 2, 3, 3}, 71, 0.5), randn<float>({6, 6}, 72, 0.5)};
    const double err = gradcheck<float>(xs, [](const std::vector<VF>& v) {
        VF h = leaky_relu(conv2d(v[0], v[1], VF::constant(Tensor<float>({3})), 2));  // [2,3,2,2]
        h = upsample2x(h);                                                             // [2,3,4,4]
        VF pooled = global_maxpool(reshape(h, Shape{2, 3, 16}));                       // [2,3]
        VF flat = reshape(concat1(std::vector<VF>{pooled, pooled}), Shape{2, 6});
        VF lin = linear(flat, v[2], VF::constant(Tensor<float>({6})));
        VF n = l2_normalize_rows(lin);
        return add(softmax_xent_diag(matmul_nt(n, n)), mean(square(lin)));
    }, 1e-3);
    CHECK(err < 1e-2);
}

TEST_CASE("adam update", "[nn]") {
    Parameter<double> p("p", TD({1}, {0.0}));
    Adam<double> opt({&p});
    backward(sum(mul(p.var, VD::constant(TD({1}, {1.0})))));  // grad 1
    opt.step(0.1);
    CHECK(p.value()[0] == Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));

    Parameter<double> q("q", TD({2}, {1.0, -2.0}));
    Adam<double> opt2({&q});
    backward(sum(mul(q.var, VD::constant(TD({2})))));  // zero grad
    opt2.step(0.1);
    CHECK(q.value()[0] == 1.0);
    CHECK(q.value()[1] == -2.0);
    CHECK_THROWS_AS(opt2.step(0.0), ConfigError);

    auto run = [] {
        std::mt19937_64 rng(5);
        Linear<float> l("l", 4, 3, rng);
        ParamRefs<float> ps;
        l.collect(ps);
        Adam<float> o(ps);
        for (int i = 0; i < 20; ++i) {
            zero_grad(ps);
            backward(mean(square(l(Var<float>::constant(randn<float>({8, 4}, 100 + i))))));
            o.step(1e-2);
        }
        return l.weight.value().values();
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip", "[nn]") {
    const auto dir = testutil::scratch_dir("ckpt");
    std::mt19937_64 rng(9);
    Linear<float> a("net/fc", 5, 4, rng);
    ParamRefs<float> pa;
    a.collect(pa);
    save_checkpoint<float>((dir / "a.ckpt").string(), pa, {{"note", "x"}});

    std::mt19937_64 rng2(10);
    Linear<float> b("net/fc", 5, 4, rng2);
    ParamRefs<float> pb;
    b.collect(pb);
    const auto meta = load_checkpoint<float>((dir / "a.ckpt").string(), pb);
    CHECK(meta.at("note") == "x");
    CHECK(b.weight.value() == a.weight.value());
    CHECK(b.bias.value() == a.bias.value());

    Linear<float> wrong("net/fc", 6, 4, rng2);
    ParamRefs<float> pw;
    wrong.collect(pw);
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "a.ckpt").string(), pw), LoadError);
    Linear<float> other("other", 5, 4, rng2);
    ParamRefs<float> po;
    other.collect(po);
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "a.ckpt").string(), po), LoadError);
}
