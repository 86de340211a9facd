// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/nn/layers.hpp"

namespace xfcsi {

struct UNetConfig {
    std::size_t n_ue = 4;
    std::size_t n_bs = 16;
    std::size_t depth = 2;          // down/up levels
    std::size_t base_channels = 32; // doubled per level
    std::size_t time_dim = 64;      // D_t
    double time_scale = 1000.0;     // t is embedded as sinusoidal_embed(t * time_scale)

    void validate() const {
        if (depth == 0) throw ConfigError("unet: depth must be >= 1");
        if (base_channels == 0) throw ConfigError("unet: base_channels must be positive");
        if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("unet: time_dim must be even and positive");
        const std::size_t div = std::size_t{1} << depth;
        if (n_ue == 0 || n_bs == 0 || n_ue % div != 0 || n_bs % div != 0) {
            throw ConfigError("unet: channel dims " + std::to_string(n_ue) + "x" + std::to_string(n_bs) +
                              " are not divisible by 2^depth = " + std::to_string(div));
        }
    }
};

// Time-conditioned U-Net over [N, 2, N_UE, N_BS] states. Encoder blocks add a
// projected time embedding, convolve, and downsample with a stride-2 conv; the
// bottleneck fuses time and stacks two convs; decoder blocks concatenate the
// matching encoder output, fuse time, convolve and upsample (nearest + conv).
// A final linear 3x3 conv maps back to two channels.
template <class T>
class VelocityField {
public:
    explicit VelocityField(UNetConfig cfg, std::uint64_t seed = 2) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const std::string p = "velocity/";
        time_mlp_ = nn::Linear<T>(p + "time/fc", cfg_.time_dim, cfg_.time_dim, rng);

        std::size_t in_ch = 2;
        for (std::size_t l = 0; l < cfg_.depth; ++l) {
            const std::size_t ch = cfg_.base_channels << l;
            const std::string b = p + "down" + std::to_string(l) + "/";
            Block blk;
            blk.time = nn::Linear<T>(b + "time", cfg_.time_dim, in_ch, rng);
            blk.conv = nn::Conv2d<T>(b + "conv", in_ch, ch, 3, 1, rng);
            blk.resample = nn::Conv2d<T>(b + "down", ch, ch, 3, 2, rng);
            down_.push_back(std::move(blk));
            in_ch = ch;
        }
        const std::string bn = p + "mid/";
        mid_time_ = nn::Linear<T>(bn + "time", cfg_.time_dim, in_ch, rng);
        mid_ = {nn::Conv2d<T>(bn + "conv0", in_ch, in_ch, 3, 1, rng), nn::Conv2d<T>(bn + "conv1", in_ch, in_ch, 3, 1, rng)};

        std::size_t cur = in_ch;
        for (std::size_t l = cfg_.depth; l-- > 0;) {
            const std::size_t skip = cfg_.base_channels << l;
            const std::size_t out_ch = l == 0 ? cfg_.base_channels : (cfg_.base_channels << (l - 1));
            const std::string b = p + "up" + std::to_string(l) + "/";
            Block blk;
            blk.time = nn::Linear<T>(b + "time", cfg_.time_dim, cur + skip, rng);
            blk.conv = nn::Conv2d<T>(b + "conv", cur + skip, out_ch, 3, 1, rng);
            blk.resample = nn::Conv2d<T>(b + "up", out_ch, out_ch, 3, 1, rng);
            up_.push_back(std::move(blk));
            cur = out_ch;
        }
        out_ = nn::Conv2d<T>(p + "out", cur, 2, 3, 1, rng);
    }

    VelocityField(const VelocityField&) = delete;
    VelocityField& operator=(const VelocityField&) = delete;
    VelocityField(VelocityField&&) = default;
    VelocityField& operator=(VelocityField&&) = default;

    const UNetConfig& config() const { return cfg_; }

    nn::ParamRefs<T> parameters() {
        nn::ParamRefs<T> out;
        time_mlp_.collect(out);
        for (auto& b : down_) b.collect(out);
        mid_time_.collect(out);
        for (auto& c : mid_) c.collect(out);
        for (auto& b : up_) b.collect(out);
        out_.collect(out);
        return out;
    }

    // x [N, 2, N_UE, N_BS], t [N] with every t in [0, 1].
    nn::Var<T> forward(const nn::Var<T>& x, const std::vector<double>& t) const {
        check_input(x.shape(), t);
        const std::size_t n = x.dim(0);
        using nn::leaky_relu;

        nn::Tensor<T> emb({n, cfg_.time_dim});
        for (std::size_t s = 0; s < n; ++s) {
            auto e = nn::sinusoidal_embed<T>(t[s] * cfg_.time_scale, cfg_.time_dim);
            std::copy(e.values().begin(), e.values().end(), emb.data() + s * cfg_.time_dim);
        }
        nn::Var<T> temb = leaky_relu(time_mlp_(nn::Var<T>::constant(std::move(emb))));

        std::vector<nn::Var<T>> skips;
        nn::Var<T> h = x;
        for (const auto& b : down_) {
            h = nn::add_channel_bias(h, b.time(temb));
            h = leaky_relu(b.conv(h));
            h = leaky_relu(b.resample(h));
            skips.push_back(h);
        }
        h = nn::add_channel_bias(h, mid_time_(temb));
        for (const auto& c : mid_) h = leaky_relu(c(h));
        for (const auto& b : up_) {
            h = nn::concat1(std::vector<nn::Var<T>>{h, skips.back()});
            skips.pop_back();
            h = nn::add_channel_bias(h, b.time(temb));
            h = leaky_relu(b.conv(h));
            h = leaky_relu(b.resample(nn::upsample2x(h)));
        }
        return out_(h);
    }

    // Single state [2, N_UE, N_BS] at one time.
    nn::Tensor<T> velocity(const nn::Tensor<T>& x, double t) const {
        if (x.rank() != 3) throw ShapeError("velocity: state must be [2,N_UE,N_BS]");
        nn::Var<T> v = forward(nn::Var<T>::constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)})), {t});
        return v.value().reshaped(x.shape());
    }

    // Batched evaluation at a shared time, no graph retained.
    nn::Tensor<T> velocity_batch(const nn::Tensor<T>& x, double t) const {
        std::vector<double> ts(x.rank() == 4 ? x.dim(0) : 0, t);
        return forward(nn::Var<T>::constant(x), ts).value();
    }

private:
    struct Block {
        nn::Linear<T> time;
        nn::Conv2d<T> conv;
        nn::Conv2d<T> resample;
        void collect(nn::ParamRefs<T>& out) { time.collect(out); conv.collect(out); resample.collect(out); }
    };

    void check_input(const nn::Shape& s, const std::vector<double>& t) const {
        if (s.size() != 4 || s[1] != 2 || s[2] != cfg_.n_ue || s[3] != cfg_.n_bs) {
            throw ShapeError("velocity: state " + nn::shape_str(s) + " does not match [N,2," + std::to_string(cfg_.n_ue) +
                             "," + std::to_string(cfg_.n_bs) + "]");
        }
        if (t.size() != s[0]) throw ShapeError("velocity: need one time per sample");
        for (double ti : t) {
            if (!(ti >= 0.0 && ti <= 1.0)) throw DomainError("velocity: t must lie in [0,1], got " + std::to_string(ti));
        }
    }

    UNetConfig cfg_;
    nn::Linear<T> time_mlp_;
    std::vector<Block> down_;
    nn::Linear<T> mid_time_;
    std::vector<nn::Conv2d<T>> mid_;
    std::vector<Block> up_;
    nn::Conv2d<T> out_;
};

}  // namespace xfcsi
