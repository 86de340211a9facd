// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/nn/layers.hpp"

namespace xfcsi {

struct EncoderConfig {
    std::size_t n_ue = 4;
    std::size_t n_bs = 16;
    std::size_t image_channels = 3;
    std::size_t image_size = 32;     // square H = W
    std::size_t cnn_base = 16;       // channels of the first conv, doubled twice
    std::size_t points = 256;        // U
    std::vector<std::size_t> point_widths{16, 32, 64};
    std::size_t embed_dim = 64;      // coordinate embedding, split evenly over range and bearing
    double bearing_scale = 20.0;     // bearing (rad) multiplier before the sinusoids
    std::size_t feature_dim = 128;   // d
    std::size_t heads = 4;

    void validate() const {
        auto positive = [](std::size_t v, const char* what) {
            if (v == 0) throw ConfigError(std::string("encoder: ") + what + " must be positive");
        };
        positive(n_ue, "n_ue");
        positive(n_bs, "n_bs");
        positive(image_channels, "image_channels");
        positive(cnn_base, "cnn_base");
        positive(points, "points");
        positive(feature_dim, "feature_dim");
        positive(heads, "heads");
        if (image_size == 0 || image_size % 8 != 0) throw ConfigError("encoder: image_size must be a positive multiple of 8");
        if (point_widths.size() != 3) throw ConfigError("encoder: point_widths needs exactly three entries");
        for (auto w : point_widths) positive(w, "point width");
        if (embed_dim == 0 || embed_dim % 4 != 0) throw ConfigError("encoder: embed_dim must be a positive multiple of 4");
        if (feature_dim % heads != 0) throw ConfigError("encoder: feature_dim must be divisible by heads");
        if (!(bearing_scale > 0.0)) throw ConfigError("encoder: bearing_scale must be positive");
    }
};

// Per-element Gaussian over the stacked angular channel: mean and log-variance
// (sigma_log = log sigma^2).
template <class T>
struct LatentGaussian {
    nn::Var<T> mu;
    nn::Var<T> sigma_log;
};

// Batched encoder inputs: images [N,C,H,W], clouds [N,3,U], coords [N,2].
template <class T>
struct EncoderBatch {
    nn::Tensor<T> images;
    nn::Tensor<T> clouds;
    nn::Tensor<T> coords;
    std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

// Coordinate branch input. The BS-relative position (metres) is expressed as
// range and bearing, and each is embedded with D/2 sinusoids. The channel's
// angular structure follows the bearing, whose span (2 pi) is small next to
// the range, so it is stretched by `bearing_scale` to use the same frequency
// band.
template <class T>
nn::Tensor<T> embed_coordinates(const nn::Tensor<T>& coords, std::size_t embed_dim, double bearing_scale) {
    if (coords.rank() != 2 || coords.dim(1) != 2) throw ShapeError("embed_coordinates: coords must be [N,2]");
    const std::size_t n = coords.dim(0), half = embed_dim / 2;
    nn::Tensor<T> out({n, embed_dim});
    for (std::size_t s = 0; s < n; ++s) {
        const double x = static_cast<double>(coords[s * 2]), y = static_cast<double>(coords[s * 2 + 1]);
        const double feat[2] = {std::hypot(x, y), std::atan2(y, x) * bearing_scale};
        for (std::size_t c = 0; c < 2; ++c) {
            auto e = nn::sinusoidal_embed<T>(feat[c], half);
            std::copy(e.values().begin(), e.values().end(), out.data() + s * embed_dim + c * half);
        }
    }
    return out;
}

// Multimodal stochastic encoder: CNN on the image, PointNet on the cloud, MLP
// on the coordinate, attention fusion, then mean / log-variance conv heads.
template <class T>
class Encoder {
public:
    explicit Encoder(EncoderConfig cfg, std::uint64_t seed = 1) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const std::string p = "encoder/";
        const std::size_t c0 = cfg_.cnn_base, c1 = 2 * c0, c2 = 4 * c0;
        cnn_ = {nn::Conv2d<T>(p + "cnn/conv0", cfg_.image_channels, c0, 3, 2, rng),
                nn::Conv2d<T>(p + "cnn/conv1", c0, c1, 3, 2, rng),
                nn::Conv2d<T>(p + "cnn/conv2", c1, c2, 3, 2, rng)};
        const std::size_t side = cfg_.image_size / 8;
        cnn_fc_ = nn::Linear<T>(p + "cnn/fc", c2 * side * side, cfg_.feature_dim, rng);

        const auto& pw = cfg_.point_widths;
        pointnet_ = {nn::Conv1d<T>(p + "pointnet/conv0", 3, pw[0], rng), nn::Conv1d<T>(p + "pointnet/conv1", pw[0], pw[1], rng),
                     nn::Conv1d<T>(p + "pointnet/conv2", pw[1], pw[2], rng)};
        pointnet_fc_ = nn::Linear<T>(p + "pointnet/fc", pw[2], cfg_.feature_dim, rng);

        mlp_ = {nn::Linear<T>(p + "mlp/fc0", cfg_.embed_dim, cfg_.feature_dim, rng),
                nn::Linear<T>(p + "mlp/fc1", cfg_.feature_dim, cfg_.feature_dim, rng)};

        fuse_ = nn::AttentionFuse<T>(p + "fuse/attn", cfg_.feature_dim, cfg_.heads, rng);
        map_fc_ = nn::Linear<T>(p + "fuse/to_map", 3 * cfg_.feature_dim, channel_numel(), rng);
        mu_head_ = nn::Conv2d<T>(p + "head/mu", 2, 2, 3, 1, rng);
        logvar_head_ = nn::Conv2d<T>(p + "head/sigma_log", 2, 2, 3, 1, rng);
        logvar_head_.bias.value().fill(T(-2));
    }

    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&) = default;
    Encoder& operator=(Encoder&&) = default;

    const EncoderConfig& config() const { return cfg_; }
    std::size_t channel_numel() const { return 2 * cfg_.n_ue * cfg_.n_bs; }

    nn::ParamRefs<T> parameters() {
        nn::ParamRefs<T> out;
        for (auto& c : cnn_) c.collect(out);
        cnn_fc_.collect(out);
        for (auto& c : pointnet_) c.collect(out);
        pointnet_fc_.collect(out);
        for (auto& l : mlp_) l.collect(out);
        fuse_.collect(out);
        map_fc_.collect(out);
        mu_head_.collect(out);
        logvar_head_.collect(out);
        return out;
    }

    // Batched forward. `attention` optionally receives the fusion weights.
    LatentGaussian<T> encode(const EncoderBatch<T>& batch, nn::Tensor<T>* attention = nullptr) const {
        check_batch(batch);
        const std::size_t n = batch.size();
        using nn::leaky_relu;

        nn::Var<T> img = nn::Var<T>::constant(batch.images);
        for (const auto& c : cnn_) img = leaky_relu(c(img));
        img = nn::reshape(img, nn::Shape{n, img.numel() / n});
        nn::Var<T> f_img = leaky_relu(cnn_fc_(img));

        nn::Var<T> pts = nn::Var<T>::constant(batch.clouds);
        for (const auto& c : pointnet_) pts = leaky_relu(c(pts));
        nn::Var<T> f_pts = leaky_relu(pointnet_fc_(nn::global_maxpool(pts)));

        nn::Var<T> pos = nn::Var<T>::constant(embed_coordinates(batch.coords, cfg_.embed_dim, cfg_.bearing_scale));
        for (const auto& l : mlp_) pos = leaky_relu(l(pos));

        nn::Var<T> fused = fuse_({f_img, f_pts, pos}, attention);
        nn::Var<T> map = leaky_relu(map_fc_(fused));
        map = nn::reshape(map, nn::Shape{n, 2, cfg_.n_ue, cfg_.n_bs});
        return {mu_head_(map), logvar_head_(map)};
    }

    // Single-sample form: image [C,H,W], cloud [3,U], coord [2]; outputs are
    // [2, N_UE, N_BS].
    LatentGaussian<T> encode(const nn::Tensor<T>& image, const nn::Tensor<T>& cloud, const nn::Tensor<T>& coord) const {
        if (image.rank() != 3 || cloud.rank() != 2 || coord.rank() != 1) {
            throw ShapeError("encode: expected image [C,H,W], cloud [3,U], coord [2]");
        }
        EncoderBatch<T> b;
        b.images = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
        b.clouds = cloud.reshaped({1, cloud.dim(0), cloud.dim(1)});
        b.coords = coord.reshaped({1, coord.dim(0)});
        LatentGaussian<T> g = encode(b);
        const nn::Shape s{2, cfg_.n_ue, cfg_.n_bs};
        return {nn::reshape(g.mu, s), nn::reshape(g.sigma_log, s)};
    }

private:
    void check_batch(const EncoderBatch<T>& b) const {
        const std::size_t n = b.size();
        const auto& is = b.images.shape();
        if (b.images.rank() != 4 || n == 0 || is[1] != cfg_.image_channels || is[2] != cfg_.image_size ||
            is[3] != cfg_.image_size) {
            throw ShapeError("encode: image batch " + nn::shape_str(is) + " does not match config");
        }
        if (b.clouds.rank() != 3 || b.clouds.dim(0) != n || b.clouds.dim(1) != 3 || b.clouds.dim(2) == 0) {
            throw ShapeError("encode: cloud batch " + nn::shape_str(b.clouds.shape()) + " must be [N,3,U]");
        }
        if (b.coords.rank() != 2 || b.coords.dim(0) != n || b.coords.dim(1) != 2) {
            throw ShapeError("encode: coord batch " + nn::shape_str(b.coords.shape()) + " must be [N,2]");
        }
    }

    EncoderConfig cfg_;
    std::vector<nn::Conv2d<T>> cnn_;
    nn::Linear<T> cnn_fc_;
    std::vector<nn::Conv1d<T>> pointnet_;
    nn::Linear<T> pointnet_fc_;
    std::vector<nn::Linear<T>> mlp_;
    nn::AttentionFuse<T> fuse_;
    nn::Linear<T> map_fc_;
    nn::Conv2d<T> mu_head_, logvar_head_;
};

// x0 = mu + exp(sigma_log / 2) * eps (reparameterisation; differentiable).
template <class T>
nn::Var<T> sample_latent(const LatentGaussian<T>& g, const nn::Tensor<T>& eps) {
    if (eps.shape() != g.mu.shape()) {
        throw ShapeError("sample_latent: eps " + nn::shape_str(eps.shape()) + " vs mu " + nn::shape_str(g.mu.shape()));
    }
    nn::Var<T> sigma = nn::exp(nn::scale(g.sigma_log, T(0.5)));
    return nn::add(g.mu, nn::mul(sigma, nn::Var<T>::constant(eps)));
}

// Mode of the latent Gaussian.
template <class T>
nn::Tensor<T> map_mode(const LatentGaussian<T>& g) {
    return g.mu.value();
}

}  // namespace xfcsi
