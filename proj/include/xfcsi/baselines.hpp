// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "xfcsi/dataset.hpp"

namespace xfcsi {

struct PilotConfig {
    double t_frame = 10e-3;   // T_f
    double t_acq = 2.5e-3;    // T_ca
    double t_est = 1e-3;      // T_ce
    int symbols = 1120;       // N_sym per frame
    double snr_db = 10.0;

    void validate() const {
        if (!(t_est > 0.0 && t_est < t_acq && t_acq < t_frame)) throw ConfigError("pilots: need 0 < T_ce < T_ca < T_f");
        if (symbols < 1) throw ConfigError("pilots: N_sym must be positive");
        if (pilot_count() < 1) throw ConfigError("pilots: configuration leaves no pilot symbols");
    }
    // floor((T_ca - T_ce) / T_f * N_sym); the tiny guard keeps exact products
    // such as 0.15 * 1120 = 168 from rounding down.
    int pilot_count() const {
        const double p = (t_acq - t_est) / t_frame * static_cast<double>(symbols);
        return static_cast<int>(std::floor(p + 1e-9));
    }
};

struct PilotObservation {
    CVector y;  // P received scalars
    CMatrix A;  // P x (N_UE N_BS), row t = f_t^T kron w_t^H acting on column-major vec(H)
    int n_ue = 0, n_bs = 0;
    std::vector<int> w_index, f_index;
    double noise_var = 0.0;
};

// DFT beam pairs cycling w fastest: pilot t uses w column t mod N_UE and
// f column (t / N_UE) mod N_BS.
inline CMatrix pilot_matrix(int n_ue, int n_bs, int pilots, std::vector<int>* w_idx = nullptr, std::vector<int>* f_idx = nullptr) {
    const CMatrix fu = dft_matrix(n_ue).entries;
    const CMatrix fb = dft_matrix(n_bs).entries;
    CMatrix a(pilots, n_ue * n_bs);
    if (w_idx) w_idx->assign(pilots, 0);
    if (f_idx) f_idx->assign(pilots, 0);
    for (int t = 0; t < pilots; ++t) {
        const int wi = t % n_ue;
        const int fi = (t / n_ue) % n_bs;
        if (w_idx) (*w_idx)[t] = wi;
        if (f_idx) (*f_idx)[t] = fi;
        for (int c = 0; c < n_bs; ++c)
            for (int r = 0; r < n_ue; ++r) a(t, c * n_ue + r) = fb(c, fi) * std::conj(fu(r, wi));
    }
    return a;
}

inline CVector vec(const ChannelMatrix& h) {
    return Eigen::Map<const CVector>(h.entries.data(), h.entries.size());
}

inline ChannelMatrix unvec(const CVector& v, int n_ue, int n_bs, Domain d = Domain::spatial) {
    ChannelMatrix h;
    h.entries = Eigen::Map<const CMatrix>(v.data(), n_ue, n_bs);
    h.domain = d;
    return h;
}

// y_t = w_t^H H f_t + n_t; noise variance = mean |w^H H f|^2 / 10^(snr/10).
// snr_db = +inf gives noiseless observations.
inline PilotObservation simulate_pilots(const ChannelMatrix& h, const PilotConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (h.domain != Domain::spatial) throw DomainError("simulate_pilots: channel must be spatial");
    PilotObservation o;
    o.n_ue = h.n_ue();
    o.n_bs = h.n_bs();
    o.A = pilot_matrix(o.n_ue, o.n_bs, cfg.pilot_count(), &o.w_index, &o.f_index);
    o.y = o.A * vec(h);
    if (std::isfinite(cfg.snr_db)) {
        const double signal = o.y.squaredNorm() / static_cast<double>(o.y.size());
        o.noise_var = signal / std::pow(10.0, cfg.snr_db / 10.0);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, std::sqrt(o.noise_var / 2.0));
        for (Eigen::Index i = 0; i < o.y.size(); ++i) o.y(i) += cd(g(rng), g(rng));
    }
    return o;
}

// Minimum-norm least squares, vec(H) = pinv(A) y.
inline ChannelMatrix ls_estimate(const PilotObservation& o, bool* rank_deficient = nullptr) {
    Eigen::CompleteOrthogonalDecomposition<CMatrix> cod(o.A);
    if (rank_deficient) *rank_deficient = cod.rank() < std::min(o.A.rows(), o.A.cols());
    return unvec(cod.solve(o.y), o.n_ue, o.n_bs);
}

// Shrinks the magnitude by tau and keeps the phase.
inline cd soft_threshold(cd z, double tau) {
    const double m = std::abs(z);
    if (m <= tau) return cd(0.0, 0.0);
    return z * ((m - tau) / m);
}

// A_ad = A (conj(F_BS) kron F_UE), so that A vec(H) = A_ad vec(H_ad).
inline CMatrix angular_operator(const PilotObservation& o) {
    const CMatrix fu = dft_matrix(o.n_ue).entries;
    const CMatrix fb = dft_matrix(o.n_bs).entries;
    CMatrix k(o.n_ue * o.n_bs, o.n_ue * o.n_bs);
    for (int c = 0; c < o.n_bs; ++c)
        for (int d = 0; d < o.n_bs; ++d) k.block(c * o.n_ue, d * o.n_ue, o.n_ue, o.n_ue) = std::conj(fb(c, d)) * fu;
    return o.A * k;
}

// Largest eigenvalue of A^H A by power iteration.
inline double power_iteration(const CMatrix& a, int iters = 200) {
    CVector v = CVector::Constant(a.cols(), cd(1.0, 0.0)).normalized();
    double lam = 0.0;
    for (int i = 0; i < iters; ++i) {
        CVector w = a.adjoint() * (a * v);
        const double n = w.norm();
        if (!(n > 0.0)) return 0.0;
        lam = n;
        v = w / n;
    }
    return lam;
}

struct LassoResult {
    ChannelMatrix h;                 // spatial estimate (best iterate)
    std::vector<double> objective;   // F(x_k), k = 0..iterations
    std::size_t iterations = 0;
    bool converged = false;
};

struct LassoOptions {
    std::size_t max_iter = 500;
    double tol = 1e-7;           // relative iterate change
    bool trace = true;
    double lipschitz_margin = 1.01;  // power iteration approaches from below
};

// ISTA for min ||y - A_ad x||^2 + lambda1 ||x||_1 over angular x, started from
// zero. Gradient 2 A_ad^H (A_ad x - y), step 1/L with L = 2 sigma_max^2.
inline LassoResult lasso_estimate(const PilotObservation& o, double lambda1, const LassoOptions& opt = {}) {
    if (!(lambda1 >= 0.0)) throw ConfigError("lasso: lambda1 must be >= 0");
    const CMatrix aad = angular_operator(o);
    const CMatrix gram = aad.adjoint() * aad;
    const CVector aty = aad.adjoint() * o.y;
    const double L = 2.0 * power_iteration(aad) * opt.lipschitz_margin;
    LassoResult res;
    const Eigen::Index n = aad.cols();
    CVector x = CVector::Zero(n);
    auto objective = [&](const CVector& z) {
        return (o.y - aad * z).squaredNorm() + lambda1 * z.cwiseAbs().sum();
    };
    CVector best = x;
    double best_f = objective(x);
    if (opt.trace) res.objective.push_back(best_f);
    if (!(L > 0.0)) {
        res.h = to_spatial(unvec(x, o.n_ue, o.n_bs, Domain::angular));
        res.converged = true;
        return res;
    }
    for (std::size_t k = 0; k < opt.max_iter; ++k) {
        const CVector grad = 2.0 * (gram * x - aty);
        CVector next = x - grad / L;
        for (Eigen::Index i = 0; i < n; ++i) next(i) = soft_threshold(next(i), lambda1 / L);
        const double change = (next - x).norm();
        x = std::move(next);
        ++res.iterations;
        if (opt.trace) {
            const double f = objective(x);
            res.objective.push_back(f);
            if (f <= best_f) {
                best_f = f;
                best = x;
            }
        } else {
            best = x;
        }
        if (change <= opt.tol * std::max(x.norm(), 1e-300)) {
            res.converged = true;
            break;
        }
    }
    res.h = to_spatial(unvec(best, o.n_ue, o.n_bs, Domain::angular));
    return res;
}

// Smallest lambda1 for which the zero vector is optimal: 2 ||A_ad^H y||_inf.
inline double lasso_lambda_max(const PilotObservation& o) {
    return 2.0 * (angular_operator(o).adjoint() * o.y).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// KNN over user locations

inline constexpr std::size_t kKnnPaths = 3;

struct KnnEntry {
    Vec2 location;  // relative to the BS
    std::array<PathParam, kKnnPaths> paths;
};

struct KnnDatabase {
    int n_ue = 0, n_bs = 0;
    std::vector<KnnEntry> entries;
};

// Angle of sum_i w_i e^{j a_i}; 0 when the weights cancel. A single angle is
// returned as is (atan2(sin a, cos a) is not bit-exact).
inline double circular_mean(const std::vector<double>& angles, const std::vector<double>& weights = {}) {
    if (angles.size() == 1 && (weights.empty() || weights[0] > 0.0)) return wrap_angle(angles[0]);
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        s += w * std::sin(angles[i]);
        c += w * std::cos(angles[i]);
    }
    if (s == 0.0 && c == 0.0) return 0.0;
    return wrap_angle(std::atan2(s, c));
}

// Strongest kKnnPaths paths by |gain|, padded with zero-gain placeholders.
inline std::array<PathParam, kKnnPaths> strongest_paths(std::vector<PathParam> paths) {
    std::stable_sort(paths.begin(), paths.end(), [](const PathParam& a, const PathParam& b) { return std::abs(a.gain) > std::abs(b.gain); });
    std::array<PathParam, kKnnPaths> out{};
    for (std::size_t i = 0; i < kKnnPaths; ++i) out[i] = i < paths.size() ? paths[i] : PathParam{cd(0.0, 0.0), 0.0, 0.0, 0.0, PathType::los};
    return out;
}

// Index-wise average over frames: complex mean gain, circular mean angles
// (over frames where the slot holds a real path), mean path length.
inline std::array<PathParam, kKnnPaths> average_paths(const std::vector<std::array<PathParam, kKnnPaths>>& frames) {
    std::array<PathParam, kKnnPaths> out{};
    for (std::size_t p = 0; p < kKnnPaths; ++p) {
        cd g(0.0, 0.0);
        double len = 0.0;
        std::vector<double> aod, aoa;
        for (const auto& f : frames) {
            g += f[p].gain;
            if (std::abs(f[p].gain) > 0.0) {
                aod.push_back(f[p].aod);
                aoa.push_back(f[p].aoa);
                len += f[p].delay_tag;
            }
        }
        out[p].gain = frames.empty() ? cd(0.0, 0.0) : g / static_cast<double>(frames.size());
        out[p].aod = circular_mean(aod);
        out[p].aoa = circular_mean(aoa);
        out[p].delay_tag = aod.empty() ? 0.0 : len / static_cast<double>(aod.size());
        out[p].type = frames.empty() ? PathType::los : frames.front()[p].type;
    }
    return out;
}

inline Vec2 dataset_bs_position(const Dataset& d) {
    const auto& bs = d.header.at("config").at("bs_position");
    return {bs.at(0).get<double>(), bs.at(1).get<double>()};
}

// One entry per training user, located at its true BS-relative position.
inline KnnDatabase knn_build(const Dataset& d, const std::vector<std::size_t>& rows) {
    KnnDatabase db;
    db.n_ue = static_cast<int>(d.n_ue);
    db.n_bs = static_cast<int>(d.n_bs);
    const Vec2 bs = dataset_bs_position(d);
    std::map<std::int32_t, std::vector<std::size_t>> by_user;
    for (auto i : rows) by_user[d.user_ids.at(i)].push_back(i);
    for (const auto& [user, idx] : by_user) {
        std::vector<std::array<PathParam, kKnnPaths>> frames;
        for (auto i : idx) frames.push_back(strongest_paths(d.path_params(i)));
        KnnEntry e;
        e.location = d.position(idx.front()) - bs;
        e.paths = average_paths(frames);
        db.entries.push_back(e);
    }
    return db;
}

inline ChannelMatrix paths_channel(const std::array<PathParam, kKnnPaths>& p, int n_bs, int n_ue) {
    return synth_channel(std::vector<PathParam>(p.begin(), p.end()), n_bs, n_ue);
}

struct KnnQuery {
    std::vector<std::size_t> neighbours;
    std::vector<double> weights;
    std::array<PathParam, kKnnPaths> paths{};
    bool k_clamped = false;
};

// k nearest entries, weights (1/d)/sum(1/d) with d >= 1e-6; ties in distance
// resolve to the lower entry index.
inline KnnQuery knn_query(const KnnDatabase& db, Vec2 location, std::size_t k) {
    if (db.entries.empty()) throw ContractError("knn: database is empty");
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    KnnQuery q;
    if (k > db.entries.size()) {
        q.k_clamped = true;
        k = db.entries.size();
    }
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(db.entries.size());
    for (std::size_t i = 0; i < db.entries.size(); ++i) dist.emplace_back((db.entries[i].location - location).norm(), i);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        q.neighbours.push_back(dist[i].second);
        q.weights.push_back(1.0 / std::max(dist[i].first, 1e-6));
        wsum += q.weights.back();
    }
    for (auto& w : q.weights) w /= wsum;
    for (std::size_t p = 0; p < kKnnPaths; ++p) {
        cd g(0.0, 0.0);
        double len = 0.0;
        std::vector<double> aod, aoa, wa;
        for (std::size_t i = 0; i < k; ++i) {
            const PathParam& src = db.entries[q.neighbours[i]].paths[p];
            g += q.weights[i] * src.gain;
            len += q.weights[i] * src.delay_tag;
            if (std::abs(src.gain) > 0.0) {  // placeholders carry no angle
                aod.push_back(src.aod);
                aoa.push_back(src.aoa);
                wa.push_back(q.weights[i]);
            }
        }
        q.paths[p] = {g, circular_mean(aod, wa), circular_mean(aoa, wa), len, db.entries[q.neighbours[0]].paths[p].type};
    }
    return q;
}

inline ChannelMatrix knn_infer(const KnnDatabase& db, Vec2 location, std::size_t k, bool* k_clamped = nullptr) {
    const KnnQuery q = knn_query(db, location, k);
    if (k_clamped) *k_clamped = q.k_clamped;
    return paths_channel(q.paths, db.n_bs, db.n_ue);
}

}  // namespace xfcsi
