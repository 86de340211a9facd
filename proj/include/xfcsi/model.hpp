// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "xfcsi/encoder.hpp"
#include "xfcsi/nn/checkpoint.hpp"
#include "xfcsi/velocity_field.hpp"

namespace xfcsi {

// Contrastive temperature tau = exp(raw); positive by construction.
template <class T>
struct Temperature {
    nn::Parameter<T> raw;

    explicit Temperature(double tau0 = 0.07) : raw("alignment/tau_raw", nn::Tensor<T>({1}, {static_cast<T>(std::log(tau0))})) {
        if (!(tau0 > 0.0)) throw ConfigError("temperature: initial tau must be positive");
    }
    double value() const { return std::exp(static_cast<double>(raw.value()[0])); }
};

struct ModelConfig {
    EncoderConfig encoder;
    UNetConfig unet;
    double tau0 = 0.07;
    std::uint64_t init_seed = 1;

    void validate() const {
        encoder.validate();
        unet.validate();
        if (encoder.n_ue != unet.n_ue || encoder.n_bs != unet.n_bs) throw ConfigError("model: encoder and U-Net array sizes differ");
    }
};

inline io::json to_json(const ModelConfig& c) {
    const auto& e = c.encoder;
    const auto& u = c.unet;
    return {{"encoder",
             {{"n_ue", e.n_ue},
              {"n_bs", e.n_bs},
              {"image_channels", e.image_channels},
              {"image_size", e.image_size},
              {"cnn_base", e.cnn_base},
              {"points", e.points},
              {"point_widths", e.point_widths},
              {"embed_dim", e.embed_dim},
              {"bearing_scale", e.bearing_scale},
              {"feature_dim", e.feature_dim},
              {"heads", e.heads}}},
            {"unet",
             {{"n_ue", u.n_ue},
              {"n_bs", u.n_bs},
              {"depth", u.depth},
              {"base_channels", u.base_channels},
              {"time_dim", u.time_dim},
              {"time_scale", u.time_scale}}},
            {"tau0", c.tau0},
            {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const io::json& j) {
    ModelConfig c;
    const auto& e = j.at("encoder");
    c.encoder.n_ue = e.at("n_ue");
    c.encoder.n_bs = e.at("n_bs");
    c.encoder.image_channels = e.at("image_channels");
    c.encoder.image_size = e.at("image_size");
    c.encoder.cnn_base = e.at("cnn_base");
    c.encoder.points = e.at("points");
    c.encoder.point_widths = e.at("point_widths").get<std::vector<std::size_t>>();
    c.encoder.embed_dim = e.at("embed_dim");
    c.encoder.bearing_scale = e.at("bearing_scale");
    c.encoder.feature_dim = e.at("feature_dim");
    c.encoder.heads = e.at("heads");
    const auto& u = j.at("unet");
    c.unet.n_ue = u.at("n_ue");
    c.unet.n_bs = u.at("n_bs");
    c.unet.depth = u.at("depth");
    c.unet.base_channels = u.at("base_channels");
    c.unet.time_dim = u.at("time_dim");
    c.unet.time_scale = u.at("time_scale");
    c.tau0 = j.at("tau0");
    c.init_seed = j.at("init_seed");
    return c;
}

// Encoder psi, velocity field theta and the contrastive temperature.
struct FlowModel {
    ModelConfig config;
    Encoder<float> encoder;
    VelocityField<float> field;
    Temperature<float> tau;

    explicit FlowModel(const ModelConfig& c)
        : config((c.validate(), c)),
          encoder(c.encoder, mix_seed(c.init_seed, 11)),
          field(c.unet, mix_seed(c.init_seed, 12)),
          tau(c.tau0) {}

    FlowModel(const FlowModel&) = delete;
    FlowModel& operator=(const FlowModel&) = delete;

    nn::ParamRefs<float> encoder_parameters() {
        auto p = encoder.parameters();
        p.push_back(&tau.raw);
        return p;
    }
    nn::ParamRefs<float> parameters() {
        auto p = encoder_parameters();
        for (auto* q : field.parameters()) p.push_back(q);
        return p;
    }
};

inline const char* kEncoderCheckpoint = "encoder.ckpt";
inline const char* kVelocityCheckpoint = "velocity.ckpt";

inline void save_model(FlowModel& m, const std::string& dir, const io::json& extra = io::json::object()) {
    std::filesystem::create_directories(dir);
    io::json meta = extra;
    meta["model"] = to_json(m.config);
    nn::save_checkpoint<float>((std::filesystem::path(dir) / kEncoderCheckpoint).string(), m.encoder_parameters(), meta);
    nn::save_checkpoint<float>((std::filesystem::path(dir) / kVelocityCheckpoint).string(), m.field.parameters(), meta);
}

// Rebuilds the architecture from the checkpoint metadata, then loads weights.
// `expected` (when given) must agree with the stored architecture.
inline std::unique_ptr<FlowModel> load_model(const std::string& dir, const ModelConfig* expected = nullptr) {
    const std::string enc_path = (std::filesystem::path(dir) / kEncoderCheckpoint).string();
    const std::string vel_path = (std::filesystem::path(dir) / kVelocityCheckpoint).string();
    io::Container c = io::read_container(enc_path, nn::kCheckpointMagic);
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(c.header.at("meta").at("model"));
    } catch (const io::json::exception& e) {
        throw LoadError("'" + enc_path + "': missing model description: " + e.what());
    }
    if (expected && to_json(*expected) != to_json(cfg)) {
        io::json a = to_json(*expected);
        a.erase("init_seed");
        a.erase("tau0");
        io::json b = to_json(cfg);
        b.erase("init_seed");
        b.erase("tau0");
        if (a != b) throw LoadError("checkpoint architecture does not match the configured model: " + b.dump());
    }
    auto m = std::make_unique<FlowModel>(cfg);
    nn::load_checkpoint<float>(enc_path, m->encoder_parameters());
    nn::load_checkpoint<float>(vel_path, m->field.parameters());
    return m;
}

}  // namespace xfcsi
