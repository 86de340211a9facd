// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/channel.hpp"
#include "xfcsi/nn/tensor.hpp"

namespace xfcsi {

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::hypot(x, y); }
    double angle() const { return std::atan2(y, x); }
    friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
};

// Axis-aligned footprint.
struct Box {
    Vec2 lo, hi;
    double height = 0.0;

    Vec2 center() const { return {(lo.x + hi.x) / 2, (lo.y + hi.y) / 2}; }
    bool contains(Vec2 p, double margin = 0.0) const {
        return p.x > lo.x - margin && p.x < hi.x + margin && p.y > lo.y - margin && p.y < hi.y + margin;
    }
    static Box centered(Vec2 c, double w, double h, double height) {
        return {{c.x - w / 2, c.y - h / 2}, {c.x + w / 2, c.y + h / 2}, height};
    }
};

// Length of the part of segment a->b strictly inside the box (Liang-Barsky).
inline double segment_overlap(Vec2 a, Vec2 b, const Box& box) {
    double t0 = 0.0, t1 = 1.0;
    const Vec2 d = b - a;
    const double p[4] = {-d.x, d.x, -d.y, d.y};
    const double q[4] = {a.x - box.lo.x, box.hi.x - a.x, a.y - box.lo.y, box.hi.y - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return 0.0;
        } else {
            const double r = q[i] / p[i];
            if (p[i] < 0.0) t0 = std::max(t0, r);
            else t1 = std::min(t1, r);
        }
    }
    return t1 > t0 ? (t1 - t0) * d.norm() : 0.0;
}

inline constexpr double kBlockTolerance = 1e-6;

inline bool segment_blocked(Vec2 a, Vec2 b, const std::vector<Box>& boxes) {
    for (const auto& box : boxes)
        if (segment_overlap(a, b, box) > kBlockTolerance) return true;
    return false;
}

// Wraps into (-pi, pi].
inline double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

struct Vehicle {
    Vec2 position;
    Vec2 velocity;
    double length = 4.5;
    double width = 2.0;
    double height = 1.5;

    Box footprint() const {
        const bool along_x = std::abs(velocity.x) >= std::abs(velocity.y);
        return Box::centered(position, along_x ? length : width, along_x ? width : length, height);
    }
};

struct SceneConfig {
    double half_extent_m = 50.0;
    std::size_t buildings = 4;
    double building_offset_m = 32.5;  // building centres at (+-offset, +-offset)
    double building_size_m = 35.0;   // blocks reach the scene edge: users live on the two streets
    double building_height_m = 20.0;
    Vec2 bs_position{-10.0, -35.0};
    double bs_height_m = 10.0;
    std::size_t vehicles = 4;
    double lane_offset_m = 5.0;
    double min_speed_mps = 5.0;
    double max_speed_mps = 15.0;
    double frame_period_s = 0.5;
    std::size_t frames = 5;
    std::size_t users = 1000;
    std::size_t max_placement_tries = 10000;
    double user_margin_m = 1.0;

    // propagation
    double carrier_hz = 28e9;
    bool carrier_phase = false;  // exp(-j 2 pi L / lambda) when true
    double reflection_coeff = 0.6;
    double scatter_coeff = 0.3;
    double scatter_ref_m = 10.0;
    double min_distance_m = 1.0;

    // sensing
    std::size_t image_size = 32;
    std::size_t points = 256;
    double point_jitter_std_m = 0.05;
    double coord_noise_std_m = 0.5;

    void validate() const {
        if (!(half_extent_m > 0)) throw ConfigError("scene: half_extent_m must be positive");
        if (buildings > 4) throw ConfigError("scene: at most 4 buildings are laid out");
        if (frames == 0 || users == 0) throw ConfigError("scene: users and frames must be positive");
        if (image_size == 0 || points == 0) throw ConfigError("scene: image_size and points must be positive");
        if (!(frame_period_s > 0)) throw ConfigError("scene: frame_period_s must be positive");
        if (coord_noise_std_m < 0 || point_jitter_std_m < 0) throw ConfigError("scene: noise levels must be >= 0");
        if (!(carrier_hz > 0)) throw ConfigError("scene: carrier_hz must be positive");
    }
    double wavelength() const { return 299792458.0 / carrier_hz; }
};

struct Scene {
    std::vector<Box> buildings;
    std::vector<Vehicle> vehicles;
    Vec2 bs_position;
    double bs_height = 10.0;  // mast height; propagation is traced in the ground plane
    std::size_t frame_index = 0;
    double frame_period = 0.5;
    double half_extent = 50.0;
    std::vector<Vec2> users;

    // Moves every vehicle by velocity * frame_period per frame, wrapping at the
    // scene edge along its lane.
    Scene at_frame(std::size_t frame) const {
        Scene s = *this;
        const double dt = frame_period * (static_cast<double>(frame) - static_cast<double>(frame_index));
        const double span = 2.0 * half_extent;
        for (auto& v : s.vehicles) {
            Vec2 p = v.position + v.velocity * dt;
            auto wrap = [&](double c) { return c - span * std::floor((c + half_extent) / span); };
            v.position = {wrap(p.x), wrap(p.y)};
        }
        s.frame_index = frame;
        return s;
    }
};

enum class PathType { los = 0, reflection = 1, scatter = 2 };

struct PathParam {
    cd gain;
    double aod = 0.0;     // azimuth of departure at the BS, (-pi, pi]
    double aoa = 0.0;     // azimuth of arrival at the UE, (-pi, pi]
    double delay_tag = 0.0;  // path length, metres
    PathType type = PathType::los;
};

inline std::vector<Box> default_buildings(const SceneConfig& cfg) {
    const double o = cfg.building_offset_m;
    const std::array<Vec2, 4> centres{{{o, o}, {-o, o}, {-o, -o}, {o, -o}}};
    std::vector<Box> out;
    for (std::size_t i = 0; i < cfg.buildings; ++i)
        out.push_back(Box::centered(centres[i], cfg.building_size_m, cfg.building_size_m, cfg.building_height_m));
    return out;
}

// Vehicles on the four lanes, initial positions and speeds drawn from rng.
template <class Rng>
std::vector<Vehicle> random_vehicles(const SceneConfig& cfg, Rng& rng) {
    std::uniform_real_distribution<double> along(-cfg.half_extent_m, cfg.half_extent_m);
    std::uniform_real_distribution<double> speed(cfg.min_speed_mps, cfg.max_speed_mps);
    std::vector<Vehicle> out;
    for (std::size_t i = 0; i < cfg.vehicles; ++i) {
        Vehicle v;
        const double s = speed(rng);
        const double a = along(rng);
        const double lane = cfg.lane_offset_m;
        switch (i % 4) {
            case 0: v.position = {a, -lane}; v.velocity = {s, 0}; break;
            case 1: v.position = {a, lane}; v.velocity = {-s, 0}; break;
            case 2: v.position = {lane, a}; v.velocity = {0, s}; break;
            default: v.position = {-lane, a}; v.velocity = {0, -s}; break;
        }
        out.push_back(v);
    }
    return out;
}

// Deterministic scene: fixed building layout, vehicles and users from seed.
// Users are uniform over the scene area outside every building.
inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Scene s;
    s.buildings = default_buildings(cfg);
    s.bs_position = cfg.bs_position;
    s.bs_height = cfg.bs_height_m;
    s.frame_period = cfg.frame_period_s;
    s.half_extent = cfg.half_extent_m;
    std::mt19937_64 rng(mix_seed(seed, 0));
    s.vehicles = random_vehicles(cfg, rng);
    std::uniform_real_distribution<double> coord(-cfg.half_extent_m + cfg.user_margin_m, cfg.half_extent_m - cfg.user_margin_m);
    for (std::size_t u = 0; u < cfg.users; ++u) {
        bool placed = false;
        for (std::size_t tries = 0; tries < cfg.max_placement_tries && !placed; ++tries) {
            Vec2 p{coord(rng), coord(rng)};
            bool inside = std::any_of(s.buildings.begin(), s.buildings.end(),
                                      [&](const Box& b) { return b.contains(p, cfg.user_margin_m); });
            if (!inside && (p - s.bs_position).norm() >= cfg.min_distance_m) {
                s.users.push_back(p);
                placed = true;
            }
        }
        if (!placed) throw GenerationError("generate_scene: could not place user " + std::to_string(u));
    }
    return s;
}

namespace detail {

inline cd path_phase(double length, const SceneConfig& cfg) {
    if (!cfg.carrier_phase) return cd(1.0, 0.0);
    return std::polar(1.0, -2.0 * kPi * length / cfg.wavelength());
}

// Exterior faces of a box as (a, b, outward normal).
struct Wall {
    Vec2 a, b, normal;
};

inline std::array<Wall, 4> walls(const Box& box) {
    return {{{{box.lo.x, box.lo.y}, {box.hi.x, box.lo.y}, {0, -1}},
             {{box.hi.x, box.lo.y}, {box.hi.x, box.hi.y}, {1, 0}},
             {{box.hi.x, box.hi.y}, {box.lo.x, box.hi.y}, {0, 1}},
             {{box.lo.x, box.hi.y}, {box.lo.x, box.lo.y}, {-1, 0}}}};
}

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

}  // namespace detail

// Mirror image of p across the infinite line through the wall.
inline Vec2 mirror_point(Vec2 p, Vec2 wall_point, Vec2 unit_normal) {
    const double dist = detail::dot(p - wall_point, unit_normal);
    return p - unit_normal * (2.0 * dist);
}

// Specular reflection point on a wall via the image method, if the wall
// segment actually intercepts the bounce and both sources face it.
inline bool reflection_point(Vec2 bs, Vec2 user, Vec2 wa, Vec2 wb, Vec2 normal, Vec2& out) {
    const double sb = detail::dot(bs - wa, normal);
    const double su = detail::dot(user - wa, normal);
    if (sb <= 0.0 || su <= 0.0) return false;
    const Vec2 img = mirror_point(bs, wa, normal);
    // user + s (img - user) hits the wall line when its normal offset is 0
    const double si = detail::dot(img - wa, normal);
    const double s = su / (su - si);
    const Vec2 p = user + (img - user) * s;
    const Vec2 along = wb - wa;
    const double t = detail::dot(p - wa, along) / detail::dot(along, along);
    if (t < 0.0 || t > 1.0) return false;
    out = p;
    return true;
}

// First-order geometric multipath between the BS and one user: LoS when
// unoccluded, specular wall reflections (image method), and a single-bounce
// scatter path off each vehicle visible from both ends.
inline std::vector<PathParam> trace_paths(const Scene& scene, Vec2 user, const SceneConfig& cfg) {
    std::vector<PathParam> paths;
    const Vec2 bs = scene.bs_position;
    const double dmin = cfg.min_distance_m;

    if (!segment_blocked(bs, user, scene.buildings)) {
        const double d = std::max((user - bs).norm(), dmin);
        paths.push_back({detail::path_phase(d, cfg) / d, wrap_angle((user - bs).angle()), wrap_angle((bs - user).angle()), d,
                         PathType::los});
    }

    for (const auto& box : scene.buildings) {
        for (const auto& w : detail::walls(box)) {
            Vec2 p;
            if (!reflection_point(bs, user, w.a, w.b, w.normal, p)) continue;
            if (segment_blocked(bs, p, scene.buildings) || segment_blocked(p, user, scene.buildings)) continue;
            const double d1 = std::max((p - bs).norm(), dmin);
            const double d2 = std::max((user - p).norm(), dmin);
            const double len = d1 + d2;
            paths.push_back({detail::path_phase(len, cfg) * (cfg.reflection_coeff / len), wrap_angle((p - bs).angle()),
                             wrap_angle((p - user).angle()), len, PathType::reflection});
        }
    }

    for (const auto& v : scene.vehicles) {
        const Vec2 c = v.position;
        if (segment_blocked(bs, c, scene.buildings) || segment_blocked(c, user, scene.buildings)) continue;
        const double d1 = std::max((c - bs).norm(), dmin);
        const double d2 = std::max((user - c).norm(), dmin);
        const double len = d1 + d2;
        paths.push_back({detail::path_phase(len, cfg) * (cfg.scatter_coeff * cfg.scatter_ref_m / (d1 * d2)),
                         wrap_angle((c - bs).angle()), wrap_angle((c - user).angle()), len, PathType::scatter});
    }
    return paths;
}

// Rescales path gains so that sum |g|^2 equals target_power.
inline void normalize_paths(std::vector<PathParam>& paths, double target_power) {
    double p = 0.0;
    for (const auto& path : paths) p += std::norm(path.gain);
    if (!(p > 0.0)) return;
    const double s = std::sqrt(target_power / p);
    for (auto& path : paths) path.gain *= s;
}

// H = sum_p g_p a_UE(aoa_p) a_BS(aod_p)^H with half-wavelength ULAs.
inline ChannelMatrix synth_channel(const std::vector<PathParam>& paths, int n_bs, int n_ue) {
    if (n_bs < 1 || n_ue < 1) throw InvalidDimension("synth_channel: array sizes must be positive");
    ChannelMatrix h = ChannelMatrix::zeros(n_ue, n_bs);
    for (const auto& p : paths) {
        h.entries += p.gain * steering_vector(n_ue, p.aoa) * steering_vector(n_bs, p.aod).adjoint();
    }
    return h;
}

struct SensingFrame {
    nn::Tensor<float> image;  // [3, S, S]
    nn::Tensor<float> cloud;  // [3, U]
    std::array<float, 2> coord{};
};

namespace detail {

inline double overlap_1d(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

inline void rasterize(const Box& box, nn::Tensor<float>& image, std::size_t channel, double half) {
    const std::size_t s = image.dim(1);
    const double cell = 2.0 * half / static_cast<double>(s);
    for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) {
            // row 0 at the top (max y)
            const double x0 = -half + c * cell, x1 = x0 + cell;
            const double y1 = half - r * cell, y0 = y1 - cell;
            const double cover = overlap_1d(x0, x1, box.lo.x, box.hi.x) * overlap_1d(y0, y1, box.lo.y, box.hi.y) / (cell * cell);
            float& px = image[(channel * s + r) * s + c];
            px = std::min(1.0f, px + static_cast<float>(cover));
        }
}

}  // namespace detail

// Top-down occupancy image, BS-visible surface point cloud and noisy GPS.
template <class Rng>
SensingFrame render_sensing(const Scene& scene, Vec2 user, const SceneConfig& cfg, Rng& rng) {
    SensingFrame out;
    const std::size_t s = cfg.image_size;
    const double half = scene.half_extent;
    out.image = nn::Tensor<float>({3, s, s});
    for (const auto& b : scene.buildings) detail::rasterize(b, out.image, 0, half);
    for (const auto& v : scene.vehicles) detail::rasterize(v.footprint(), out.image, 1, half);
    {
        const double cell = 2.0 * half / static_cast<double>(s);
        auto idx = [&](double v) {
            return static_cast<std::size_t>(std::clamp(std::floor(v / cell), 0.0, static_cast<double>(s - 1)));
        };
        const std::size_t c = idx(user.x + half);
        const std::size_t r = idx(half - user.y);
        out.image[(2 * s + r) * s + c] = 1.0f;
    }

    // Surfaces: exterior walls of buildings and vehicles that face the BS and
    // are not occluded by a building.
    struct Surface {
        Vec2 a, b;
        double height;
    };
    std::vector<Surface> visible;
    double total_len = 0.0;
    auto consider = [&](const Box& box) {
        for (const auto& w : detail::walls(box)) {
            if (detail::dot(scene.bs_position - w.a, w.normal) <= 0.0) continue;
            const Vec2 probe = (w.a + w.b) * 0.5 + w.normal * 1e-3;
            if (segment_blocked(scene.bs_position, probe, scene.buildings)) continue;
            visible.push_back({w.a, w.b, box.height});
            total_len += (w.b - w.a).norm();
        }
    };
    for (const auto& b : scene.buildings) consider(b);
    for (const auto& v : scene.vehicles) consider(v.footprint());

    out.cloud = nn::Tensor<float>({3, cfg.points});
    std::normal_distribution<double> jitter(0.0, cfg.point_jitter_std_m);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (total_len > 0.0) {
        for (std::size_t i = 0; i < cfg.points; ++i) {
            double pick = unit(rng) * total_len;
            std::size_t k = 0;
            while (k + 1 < visible.size() && pick > (visible[k].b - visible[k].a).norm()) {
                pick -= (visible[k].b - visible[k].a).norm();
                ++k;
            }
            const auto& sf = visible[k];
            const double f = std::clamp(pick / (sf.b - sf.a).norm(), 0.0, 1.0);
            const Vec2 p = sf.a + (sf.b - sf.a) * f;
            const double z = unit(rng) * sf.height;
            out.cloud[0 * cfg.points + i] = static_cast<float>(p.x + jitter(rng));
            out.cloud[1 * cfg.points + i] = static_cast<float>(p.y + jitter(rng));
            out.cloud[2 * cfg.points + i] = static_cast<float>(z + jitter(rng));
        }
    }

    std::normal_distribution<double> gps(0.0, cfg.coord_noise_std_m);
    const Vec2 rel = user - scene.bs_position;
    out.coord = {static_cast<float>(rel.x + gps(rng)), static_cast<float>(rel.y + gps(rng))};
    return out;
}

}  // namespace xfcsi
