// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/io.hpp"
#include "xfcsi/scene.hpp"

namespace xfcsi {

inline const std::string kDatasetMagic = "XFCSI-DATA-1";
inline constexpr int kGeneratorVersion = 1;

struct DatasetConfig {
    SceneConfig scene;
    int n_bs = 16;
    int n_ue = 4;
    std::uint64_t seed = 2024;
    // Per-sample gains are rescaled so that ||H||_F^2 = n_ue * n_bs.
    bool normalize_power = true;

    void validate() const {
        scene.validate();
        if (n_bs < 1 || n_ue < 1) throw ConfigError("arrays: n_bs and n_ue must be positive");
    }
    double target_power() const { return static_cast<double>(n_ue) * n_bs; }
};

struct SensingSample {
    nn::Tensor<float> image;  // [3, S, S]
    nn::Tensor<float> cloud;  // [3, U]
    nn::Tensor<float> coord;  // [2]
    ChannelMatrix channel;    // spatial ground truth
    std::size_t frame_index = 0;
    std::size_t user_id = 0;
};

// Sample-major packed arrays. Channels are stored as stacked spatial
// [2, N_UE, N_BS] float32; path tables hold (re, im, aod, aoa, delay, type).
struct Dataset {
    io::json header;
    std::size_t count = 0;
    std::size_t n_ue = 0, n_bs = 0, image_size = 0, points = 0, frames = 0;
    std::vector<float> images, clouds, coords, channels, positions;
    std::vector<std::int32_t> user_ids, frame_indices;
    std::vector<std::uint32_t> path_offsets;  // count + 1 entries
    std::vector<float> paths;                 // [P, 6]

    std::size_t image_numel() const { return 3 * image_size * image_size; }
    std::size_t cloud_numel() const { return 3 * points; }
    std::size_t channel_numel() const { return 2 * n_ue * n_bs; }
    std::size_t path_count(std::size_t i) const { return path_offsets.at(i + 1) - path_offsets.at(i); }
    bool blocked(std::size_t i) const { return path_count(i) == 0; }
    std::size_t users() const { return frames ? count / frames : 0; }

    ChannelMatrix channel(std::size_t i) const {
        check(i);
        ChannelMatrix h = ChannelMatrix::zeros(static_cast<int>(n_ue), static_cast<int>(n_bs));
        const float* c = channels.data() + i * channel_numel();
        const std::size_t plane = n_ue * n_bs;
        for (std::size_t r = 0; r < n_ue; ++r)
            for (std::size_t k = 0; k < n_bs; ++k)
                h.entries(static_cast<int>(r), static_cast<int>(k)) = cd(c[r * n_bs + k], c[plane + r * n_bs + k]);
        return h;
    }

    std::vector<PathParam> path_params(std::size_t i) const {
        check(i);
        std::vector<PathParam> out;
        for (std::size_t p = path_offsets[i]; p < path_offsets[i + 1]; ++p) {
            const float* r = paths.data() + p * 6;
            out.push_back({cd(r[0], r[1]), r[2], r[3], r[4], static_cast<PathType>(static_cast<int>(r[5]))});
        }
        return out;
    }

    Vec2 position(std::size_t i) const {
        check(i);
        return {positions[2 * i], positions[2 * i + 1]};
    }

    SensingSample sample(std::size_t i) const {
        check(i);
        SensingSample s;
        s.image = nn::Tensor<float>({3, image_size, image_size},
                                    std::vector<float>(images.begin() + i * image_numel(), images.begin() + (i + 1) * image_numel()));
        s.cloud = nn::Tensor<float>({3, points},
                                    std::vector<float>(clouds.begin() + i * cloud_numel(), clouds.begin() + (i + 1) * cloud_numel()));
        s.coord = nn::Tensor<float>({2}, {coords[2 * i], coords[2 * i + 1]});
        s.channel = channel(i);
        s.frame_index = static_cast<std::size_t>(frame_indices[i]);
        s.user_id = static_cast<std::size_t>(user_ids[i]);
        return s;
    }

    void check(std::size_t i) const {
        if (i >= count) throw ContractError("dataset index " + std::to_string(i) + " out of range (" + std::to_string(count) + ")");
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.header == b.header && a.count == b.count && a.images == b.images && a.clouds == b.clouds &&
               a.coords == b.coords && a.channels == b.channels && a.positions == b.positions && a.user_ids == b.user_ids &&
               a.frame_indices == b.frame_indices && a.path_offsets == b.path_offsets && a.paths == b.paths;
    }
};

// Per-user vehicle episode. Every user sees its own draw of the four vehicles,
// advanced frame by frame.
inline Scene user_episode(const Scene& base, const SceneConfig& cfg, std::uint64_t seed, std::size_t user) {
    Scene s = base;
    std::mt19937_64 rng(mix_seed(seed, 1 + user));
    s.vehicles = random_vehicles(cfg, rng);
    s.frame_index = 0;
    return s;
}

// The propagation paths stored for (user, frame), normalised as in the dataset.
inline std::vector<PathParam> sample_paths(const Scene& base, const DatasetConfig& cfg, std::size_t user, std::size_t frame) {
    const Scene s = user_episode(base, cfg.scene, cfg.seed, user).at_frame(frame);
    auto paths = trace_paths(s, base.users.at(user), cfg.scene);
    if (cfg.normalize_power) normalize_paths(paths, cfg.target_power());
    return paths;
}

inline io::json dataset_config_json(const DatasetConfig& cfg) {
    const auto& s = cfg.scene;
    return {{"half_extent_m", s.half_extent_m},
            {"buildings", s.buildings},
            {"building_offset_m", s.building_offset_m},
            {"building_size_m", s.building_size_m},
            {"building_height_m", s.building_height_m},
            {"bs_position", {s.bs_position.x, s.bs_position.y, s.bs_height_m}},
            {"vehicles", s.vehicles},
            {"frame_period_s", s.frame_period_s},
            {"frames", s.frames},
            {"users", s.users},
            {"carrier_hz", s.carrier_hz},
            {"carrier_phase", s.carrier_phase},
            {"reflection_coeff", s.reflection_coeff},
            {"scatter_coeff", s.scatter_coeff},
            {"scatter_ref_m", s.scatter_ref_m},
            {"image_size", s.image_size},
            {"points", s.points},
            {"point_jitter_std_m", s.point_jitter_std_m},
            {"coord_noise_std_m", s.coord_noise_std_m},
            {"normalize_power", cfg.normalize_power}};
}

// users x frames samples, generated in parallel per user with derived seeds.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    const auto& sc = cfg.scene;
    const Scene base = generate_scene(cfg.seed, sc);
    const std::size_t users = sc.users, frames = sc.frames, n = users * frames;

    Dataset d;
    d.count = n;
    d.n_ue = static_cast<std::size_t>(cfg.n_ue);
    d.n_bs = static_cast<std::size_t>(cfg.n_bs);
    d.image_size = sc.image_size;
    d.points = sc.points;
    d.frames = frames;
    d.images.assign(n * d.image_numel(), 0.0f);
    d.clouds.assign(n * d.cloud_numel(), 0.0f);
    d.coords.assign(n * 2, 0.0f);
    d.channels.assign(n * d.channel_numel(), 0.0f);
    d.positions.assign(n * 2, 0.0f);
    d.user_ids.assign(n, 0);
    d.frame_indices.assign(n, 0);
    std::vector<std::vector<PathParam>> all_paths(n);

    parallel_for(users, [&](std::size_t u) {
        const Scene episode = user_episode(base, sc, cfg.seed, u);
        const Vec2 user = base.users[u];
        for (std::size_t f = 0; f < frames; ++f) {
            const std::size_t i = u * frames + f;
            const Scene s = episode.at_frame(f);
            auto paths = trace_paths(s, user, sc);
            if (cfg.normalize_power) normalize_paths(paths, cfg.target_power());
            const ChannelTensor h = stack_real(synth_channel(paths, cfg.n_bs, cfg.n_ue));
            std::mt19937_64 rng(mix_seed(cfg.seed, (1ULL << 40) + i));
            const SensingFrame sense = render_sensing(s, user, sc, rng);
            std::copy(sense.image.values().begin(), sense.image.values().end(), d.images.begin() + i * d.image_numel());
            std::copy(sense.cloud.values().begin(), sense.cloud.values().end(), d.clouds.begin() + i * d.cloud_numel());
            d.coords[2 * i] = sense.coord[0];
            d.coords[2 * i + 1] = sense.coord[1];
            for (std::size_t e = 0; e < d.channel_numel(); ++e) d.channels[i * d.channel_numel() + e] = static_cast<float>(h.values[e]);
            d.positions[2 * i] = static_cast<float>(user.x);
            d.positions[2 * i + 1] = static_cast<float>(user.y);
            d.user_ids[i] = static_cast<std::int32_t>(u);
            d.frame_indices[i] = static_cast<std::int32_t>(f);
            all_paths[i] = std::move(paths);
        }
    });

    d.path_offsets.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        d.path_offsets[i + 1] = d.path_offsets[i] + static_cast<std::uint32_t>(all_paths[i].size());
        for (const auto& p : all_paths[i]) {
            d.paths.insert(d.paths.end(), {static_cast<float>(p.gain.real()), static_cast<float>(p.gain.imag()),
                                           static_cast<float>(p.aod), static_cast<float>(p.aoa),
                                           static_cast<float>(p.delay_tag), static_cast<float>(static_cast<int>(p.type))});
        }
    }

    d.header = {{"format", kDatasetMagic},
                {"generator_version", kGeneratorVersion},
                {"seed", cfg.seed},
                {"count", n},
                {"users", users},
                {"frames", frames},
                {"n_ue", cfg.n_ue},
                {"n_bs", cfg.n_bs},
                {"image_size", sc.image_size},
                {"points", sc.points},
                {"total_paths", d.paths.size() / 6},
                {"config", dataset_config_json(cfg)}};
    return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
    std::vector<char> payload;
    io::json h = d.header;
    io::json arrays = io::json::array();
    auto add = [&](const char* name, const char* dtype, const auto& vec) {
        arrays.push_back({{"name", name}, {"dtype", dtype}, {"offset", payload.size()}, {"count", vec.size()}});
        io::append_raw(payload, vec.data(), vec.size());
    };
    add("images", "f32", d.images);
    add("clouds", "f32", d.clouds);
    add("coords", "f32", d.coords);
    add("channels", "f32", d.channels);
    add("positions", "f32", d.positions);
    add("user_ids", "i32", d.user_ids);
    add("frame_indices", "i32", d.frame_indices);
    add("path_offsets", "u32", d.path_offsets);
    add("paths", "f32", d.paths);
    h["arrays"] = arrays;
    io::write_container(path, kDatasetMagic, h, payload);
}

inline Dataset load_dataset(const std::string& path) {
    io::Container c = io::read_container(path, kDatasetMagic);
    Dataset d;
    try {
        d.count = c.header.at("count").get<std::size_t>();
        d.n_ue = c.header.at("n_ue").get<std::size_t>();
        d.n_bs = c.header.at("n_bs").get<std::size_t>();
        d.image_size = c.header.at("image_size").get<std::size_t>();
        d.points = c.header.at("points").get<std::size_t>();
        d.frames = c.header.at("frames").get<std::size_t>();
        for (const auto& a : c.header.at("arrays")) {
            const auto name = a.at("name").get<std::string>();
            const auto off = a.at("offset").get<std::size_t>();
            const auto cnt = a.at("count").get<std::size_t>();
            if (name == "images") d.images = io::read_raw<float>(c.payload, off, cnt);
            else if (name == "clouds") d.clouds = io::read_raw<float>(c.payload, off, cnt);
            else if (name == "coords") d.coords = io::read_raw<float>(c.payload, off, cnt);
            else if (name == "channels") d.channels = io::read_raw<float>(c.payload, off, cnt);
            else if (name == "positions") d.positions = io::read_raw<float>(c.payload, off, cnt);
            else if (name == "user_ids") d.user_ids = io::read_raw<std::int32_t>(c.payload, off, cnt);
            else if (name == "frame_indices") d.frame_indices = io::read_raw<std::int32_t>(c.payload, off, cnt);
            else if (name == "path_offsets") d.path_offsets = io::read_raw<std::uint32_t>(c.payload, off, cnt);
            else if (name == "paths") d.paths = io::read_raw<float>(c.payload, off, cnt);
        }
    } catch (const io::json::exception& e) {
        throw LoadError("'" + path + "': malformed dataset header: " + e.what());
    }
    c.header.erase("arrays");
    d.header = std::move(c.header);
    const std::size_t n = d.count;
    if (d.images.size() != n * d.image_numel() || d.clouds.size() != n * d.cloud_numel() || d.coords.size() != 2 * n ||
        d.channels.size() != n * d.channel_numel() || d.positions.size() != 2 * n || d.user_ids.size() != n ||
        d.frame_indices.size() != n || d.path_offsets.size() != n + 1 || d.paths.size() != 6 * std::size_t{d.path_offsets.back()}) {
        throw LoadError("'" + path + "': array sizes disagree with the header");
    }
    return d;
}

struct Split {
    std::vector<std::size_t> train, test;
};

// Split by user id: the last `test_fraction` of a seeded user permutation goes
// to the test set, so all frames of a user land on the same side.
inline Split split_by_user(const Dataset& d, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("split: test fraction must lie in (0,1)");
    const std::size_t users = d.users();
    std::vector<std::size_t> perm(users);
    for (std::size_t i = 0; i < users; ++i) perm[i] = i;
    std::mt19937_64 rng(mix_seed(seed, 7));
    for (std::size_t i = users; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
    }
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_fraction * users)));
    std::vector<char> is_test(users, 0);
    for (std::size_t i = users - n_test; i < users; ++i) is_test[perm[i]] = 1;
    Split s;
    for (std::size_t i = 0; i < d.count; ++i) (is_test[static_cast<std::size_t>(d.user_ids[i])] ? s.test : s.train).push_back(i);
    return s;
}

}  // namespace xfcsi
