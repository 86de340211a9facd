// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "xfcsi/dataset.hpp"
#include "xfcsi/evalbench.hpp"
#include "xfcsi/flow_train.hpp"

namespace xfcsi {

// Every accepted key with its default. A user document may only contain keys
// that appear here, with a value of the same JSON kind.
inline io::json default_run_config() {
    return io::json::parse(R"({
  "seed": 2024,
  "scene": {
    "half_extent_m": 50.0, "buildings": 4, "building_offset_m": 32.5, "building_size_m": 35.0,
    "building_height_m": 20.0, "bs_position": [-10.0, -35.0, 10.0], "vehicles": 4, "lane_offset_m": 5.0,
    "min_speed_mps": 5.0, "max_speed_mps": 15.0, "frame_period_s": 0.5, "frames": 5, "users": 1000,
    "carrier_hz": 28e9, "carrier_phase": false, "reflection_coeff": 0.6, "scatter_coeff": 0.3,
    "scatter_ref_m": 10.0, "image_size": 32, "points": 256, "point_jitter_std_m": 0.05,
    "coord_noise_std_m": 0.5, "normalize_power": true
  },
  "arrays": {"n_bs": 16, "n_ue": 4},
  "train": {
    "batch_size": 64, "epochs": 40, "lr": 1e-3, "lambda": 1e-4, "sigma_min": 0.0, "contrastive": true,
    "test_fraction": 0.1, "eval_every": 10, "eval_K": 7, "tau0": 0.07,
    "encoder": {"cnn_base": 16, "point_widths": [16, 32, 64], "embed_dim": 64, "bearing_scale": 20.0, "feature_dim": 128, "heads": 4},
    "unet": {"depth": 2, "base_channels": 32, "time_dim": 64, "time_scale": 1000.0}
  },
  "infer": {"K": 7},
  "pilots": {"t_frame_ms": 10.0, "t_ce_ms": 1.0, "symbols": 1120},
  "eval": {
    "sweep": "snr", "snr_db": [0, 5, 10, 15, 20], "tca_ms": [1.25, 1.5, 2.0, 2.5], "tca_K": [2, 3, 5, 7],
    "tca_snr_db": 10.0, "snr_tca_ms": 2.5, "methods": ["flow", "ls", "lasso", "knn"], "knn_k": 5,
    "lasso_grid": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0], "lasso_validation": 64, "lasso_max_iter": 500,
    "lasso_tol": 1e-7, "bandwidth_hz": 120e3, "gps_bits": 128
  },
  "paths": {"data": "data/desk.xfd", "checkpoints": "runs/ckpt", "out": "runs/bench"}
})");
}

namespace detail {

inline bool same_kind(const io::json& a, const io::json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

inline void check_keys(const io::json& user, const io::json& schema, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        const io::json& expect = schema.at(it.key());
        if (!same_kind(it.value(), expect)) {
            throw ConfigError("config key '" + key + "' has type " + std::string(it.value().type_name()) + ", expected " +
                              expect.type_name());
        }
        if (expect.is_object()) check_keys(it.value(), expect, key);
    }
}

}  // namespace detail

// Validates the user document against the schema and merges it over the
// defaults.
inline io::json merge_run_config(const io::json& user) {
    if (!user.is_object()) throw ConfigError("config root must be a JSON object");
    io::json base = default_run_config();
    detail::check_keys(user, base, "");
    base.merge_patch(user);
    return base;
}

inline io::json load_run_config(const std::string& path) {
    if (path.empty()) return default_run_config();
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    io::json user;
    try {
        user = io::json::parse(is);
    } catch (const io::json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return merge_run_config(user);
}

// Applies "a.b.c=value" overrides; value is parsed as JSON, falling back to a
// plain string.
inline io::json apply_overrides(const io::json& cfg, const std::vector<std::string>& sets) {
    io::json patch = io::json::object();
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' must look like key.path=value");
        const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
        io::json value;
        try {
            value = io::json::parse(raw);
        } catch (const io::json::exception&) {
            value = raw;
        }
        io::json* node = &patch;
        std::stringstream ss(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
        (*node)[parts.back()] = value;
    }
    detail::check_keys(patch, default_run_config(), "");
    io::json out = cfg;
    out.merge_patch(patch);
    return out;
}

template <class V>
V cfg_get(const io::json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<V>();
    } catch (const io::json::exception& e) {
        throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
    }
}

inline DatasetConfig dataset_config(const io::json& j) {
    DatasetConfig c;
    auto& s = c.scene;
    const auto& js = j.at("scene");
    s.half_extent_m = js.at("half_extent_m");
    s.buildings = js.at("buildings");
    s.building_offset_m = js.at("building_offset_m");
    s.building_size_m = js.at("building_size_m");
    s.building_height_m = js.at("building_height_m");
    const auto& bs = js.at("bs_position");
    if (!bs.is_array() || bs.size() != 3) throw ConfigError("config key 'scene.bs_position' must be [x, y, height]");
    s.bs_position = {bs[0].get<double>(), bs[1].get<double>()};
    s.bs_height_m = bs[2].get<double>();
    s.vehicles = js.at("vehicles");
    s.lane_offset_m = js.at("lane_offset_m");
    s.min_speed_mps = js.at("min_speed_mps");
    s.max_speed_mps = js.at("max_speed_mps");
    s.frame_period_s = js.at("frame_period_s");
    s.frames = js.at("frames");
    s.users = js.at("users");
    s.carrier_hz = js.at("carrier_hz");
    s.carrier_phase = js.at("carrier_phase");
    s.reflection_coeff = js.at("reflection_coeff");
    s.scatter_coeff = js.at("scatter_coeff");
    s.scatter_ref_m = js.at("scatter_ref_m");
    s.image_size = js.at("image_size");
    s.points = js.at("points");
    s.point_jitter_std_m = js.at("point_jitter_std_m");
    s.coord_noise_std_m = js.at("coord_noise_std_m");
    c.normalize_power = js.at("normalize_power");
    c.n_bs = cfg_get<int>(j, "arrays", "n_bs");
    c.n_ue = cfg_get<int>(j, "arrays", "n_ue");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

inline TrainConfig train_config(const io::json& j) {
    const auto dc = dataset_config(j);
    const auto& t = j.at("train");
    TrainConfig c;
    c.batch_size = t.at("batch_size");
    c.epochs = t.at("epochs");
    c.lr = t.at("lr");
    c.loss.lambda = t.at("lambda");
    c.loss.sigma_min = t.at("sigma_min");
    c.loss.contrastive = t.at("contrastive");
    c.test_fraction = t.at("test_fraction");
    c.eval_every = t.at("eval_every");
    c.eval_K = t.at("eval_K");
    c.seed = j.at("seed").get<std::uint64_t>();
    auto& m = c.model;
    m.tau0 = t.at("tau0");
    m.init_seed = c.seed;
    m.encoder.n_ue = m.unet.n_ue = static_cast<std::size_t>(dc.n_ue);
    m.encoder.n_bs = m.unet.n_bs = static_cast<std::size_t>(dc.n_bs);
    m.encoder.image_size = dc.scene.image_size;
    m.encoder.points = dc.scene.points;
    const auto& e = t.at("encoder");
    m.encoder.cnn_base = e.at("cnn_base");
    m.encoder.point_widths = e.at("point_widths").get<std::vector<std::size_t>>();
    m.encoder.embed_dim = e.at("embed_dim");
    m.encoder.bearing_scale = e.at("bearing_scale");
    m.encoder.feature_dim = e.at("feature_dim");
    m.encoder.heads = e.at("heads");
    const auto& u = t.at("unet");
    m.unet.depth = u.at("depth");
    m.unet.base_channels = u.at("base_channels");
    m.unet.time_dim = u.at("time_dim");
    m.unet.time_scale = u.at("time_scale");
    c.validate();
    return c;
}

inline BenchConfig bench_config(const io::json& j) {
    const auto& e = j.at("eval");
    const auto& p = j.at("pilots");
    BenchConfig c;
    const std::string sweep = e.at("sweep");
    if (sweep == "snr") c.sweep = Sweep::snr;
    else if (sweep == "tca") c.sweep = Sweep::tca;
    else throw ConfigError("config key 'eval.sweep' must be \"snr\" or \"tca\", got \"" + sweep + "\"");
    c.snr_db = e.at("snr_db").get<std::vector<double>>();
    c.tca_ms = e.at("tca_ms").get<std::vector<double>>();
    c.tca_K = e.at("tca_K").get<std::vector<std::size_t>>();
    c.tca_snr_db = e.at("tca_snr_db");
    c.snr_tca_ms = e.at("snr_tca_ms");
    c.flow_K = j.at("infer").at("K");
    c.methods = e.at("methods").get<std::vector<std::string>>();
    c.knn_k = e.at("knn_k");
    c.lasso_grid = e.at("lasso_grid").get<std::vector<double>>();
    c.lasso_validation = e.at("lasso_validation");
    c.lasso_max_iter = e.at("lasso_max_iter");
    c.lasso_tol = e.at("lasso_tol");
    c.pilots.t_frame = p.at("t_frame_ms").get<double>() * 1e-3;
    c.pilots.t_est = p.at("t_ce_ms").get<double>() * 1e-3;
    c.pilots.symbols = p.at("symbols");
    c.accounting.t_frame = c.pilots.t_frame;
    c.accounting.bandwidth_hz = e.at("bandwidth_hz");
    c.accounting.gps_bits = e.at("gps_bits");
    c.test_fraction = j.at("train").at("test_fraction");
    c.split_seed = j.at("seed").get<std::uint64_t>();
    c.seed = mix_seed(j.at("seed").get<std::uint64_t>(), 99);
    c.validate();
    return c;
}

}  // namespace xfcsi
