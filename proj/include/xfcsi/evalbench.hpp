// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "xfcsi/baselines.hpp"
#include "xfcsi/model.hpp"
#include "xfcsi/ode_infer.hpp"

namespace xfcsi {

struct BeamPair {
    CVector f, w;
    int f_index = 0, w_index = 0;
    bool fallback = false;  // estimate was zero; broadside pair returned
};

// Exhaustive search over DFT(N_UE) x DFT(N_BS) for the largest |w^H H f|;
// the first maximum in (w_index, f_index) order wins.
inline BeamPair beam_search(const ChannelMatrix& h_est) {
    if (h_est.domain != Domain::spatial) throw DomainError("beam_search: expected a spatial channel");
    const CMatrix fu = dft_matrix(h_est.n_ue()).entries;
    const CMatrix fb = dft_matrix(h_est.n_bs()).entries;
    BeamPair b;
    double best = 0.0;
    for (int wi = 0; wi < h_est.n_ue(); ++wi) {
        const auto row = (fu.col(wi).adjoint() * h_est.entries).eval();
        for (int fi = 0; fi < h_est.n_bs(); ++fi) {
            const double g = std::abs((row * fb.col(fi))(0, 0));
            if (g > best) {
                best = g;
                b.w_index = wi;
                b.f_index = fi;
            }
        }
    }
    b.fallback = !(best > 0.0);
    b.w = fu.col(b.w_index);
    b.f = fb.col(b.f_index);
    return b;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

// log2(1 + snr |w^H H f|^2), snr linear.
inline double instantaneous_se(const CVector& w, const CVector& f, const ChannelMatrix& h_true, double snr_linear) {
    const cd g = (w.adjoint() * h_true.entries * f)(0, 0);
    return std::log2(1.0 + snr_linear * std::norm(g));
}

struct FrameAccounting {
    double t_frame = 10e-3;  // T_f
    double t_acq = 2.5e-3;   // T_ca
    double bandwidth_hz = 120e3;
    double gps_bits = 128.0;

    void validate() const {
        if (!(t_acq >= 0.0 && t_acq < t_frame)) throw ConfigError("accounting: need 0 <= T_ca < T_f");
        if (!(bandwidth_hz > 0.0)) throw ConfigError("accounting: bandwidth must be positive");
    }
    double gps_overhead() const { return gps_bits / (t_frame * bandwidth_hz); }
};

inline double pilot_based_se(double r, const FrameAccounting& a) {
    a.validate();
    return (a.t_frame - a.t_acq) / a.t_frame * r;
}

inline double sensing_aided_se(double r_prev, double r_cur, const FrameAccounting& a) {
    a.validate();
    return a.t_acq / a.t_frame * r_prev + (a.t_frame - a.t_acq) / a.t_frame * r_cur - a.gps_overhead();
}

enum class Sweep { snr, tca };

struct BenchConfig {
    Sweep sweep = Sweep::snr;
    std::vector<double> snr_db{0, 5, 10, 15, 20};
    std::vector<double> tca_ms{1.25, 1.5, 2.0, 2.5};
    std::vector<std::size_t> tca_K{2, 3, 5, 7};  // flow steps paired with tca_ms
    double tca_snr_db = 10.0;
    double snr_tca_ms = 2.5;
    std::size_t flow_K = 7;
    std::vector<std::string> methods{"flow", "ls", "lasso", "knn"};
    std::size_t knn_k = 5;
    std::vector<double> lasso_grid{1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0};  // fractions of lambda_max
    std::size_t lasso_validation = 64;  // training rows used to pick lambda1
    std::size_t lasso_max_iter = 500;
    double lasso_tol = 1e-7;
    PilotConfig pilots;
    FrameAccounting accounting;
    double test_fraction = 0.1;  // must match training for a clean split
    std::uint64_t split_seed = 7;
    std::uint64_t seed = 99;

    void validate() const {
        if (sweep == Sweep::tca && tca_ms.size() != tca_K.size()) throw ConfigError("eval: tca_ms and tca_K must pair up");
        if (methods.empty()) throw ConfigError("eval: no methods requested");
        for (const auto& m : methods)
            if (m != "flow" && m != "ls" && m != "lasso" && m != "knn") throw ConfigError("eval: unknown method '" + m + "'");
        if (knn_k < 1) throw ConfigError("eval: knn_k must be >= 1");
        if (flow_K < 1) throw ConfigError("eval: flow_K must be >= 1");
        if (lasso_grid.empty()) throw ConfigError("eval: lasso_grid is empty");
        for (auto k : tca_K)
            if (k < 1) throw ConfigError("eval: tca_K entries must be >= 1");
    }
};

struct SweepPoint {
    std::string var;  // "snr_db" or "tca_ms"
    double value = 0.0;
    double snr_db = 10.0;
    double tca_ms = 2.5;
    std::size_t flow_K = 7;
};

inline std::vector<SweepPoint> sweep_points(const BenchConfig& c) {
    std::vector<SweepPoint> out;
    if (c.sweep == Sweep::snr) {
        for (double s : c.snr_db) out.push_back({"snr_db", s, s, c.snr_tca_ms, c.flow_K});
    } else {
        for (std::size_t i = 0; i < c.tca_ms.size(); ++i) out.push_back({"tca_ms", c.tca_ms[i], c.tca_snr_db, c.tca_ms[i], c.tca_K[i]});
    }
    return out;
}

struct SampleRow {
    std::string method;
    std::string var;
    double value = 0.0;
    std::size_t row = 0, user_id = 0, frame = 0;
    double nmse_linear = 0.0, cossim = 0.0, se = 0.0;
};

struct Aggregate {
    std::string method, var;
    double value = 0.0;
    std::size_t count = 0;
    double nmse_linear = 0.0, nmse_db = 0.0, cossim = 0.0, se = 0.0;
    double lasso_lambda = std::numeric_limits<double>::quiet_NaN();
};

struct Report {
    io::json config;
    std::vector<Aggregate> aggregates;
    std::vector<SampleRow> samples;
    std::map<std::string, std::string> errors;  // method -> reason it was skipped
    io::json accounting;
};

namespace detail {

inline bool is_sensing(const std::string& m) { return m == "flow" || m == "knn"; }

inline double safe_cossim(const ChannelMatrix& truth, const ChannelMatrix& est) {
    return est.frobenius_sq() > 0.0 ? cosine_similarity(truth, est) : 0.0;
}

}  // namespace detail

inline io::json to_json(const BenchConfig& c) {
    return {{"sweep", c.sweep == Sweep::snr ? "snr" : "tca"},
            {"snr_db", c.snr_db},
            {"tca_ms", c.tca_ms},
            {"tca_K", c.tca_K},
            {"tca_snr_db", c.tca_snr_db},
            {"snr_tca_ms", c.snr_tca_ms},
            {"flow_K", c.flow_K},
            {"methods", c.methods},
            {"knn_k", c.knn_k},
            {"lasso_grid", c.lasso_grid},
            {"lasso_validation", c.lasso_validation},
            {"lasso_max_iter", c.lasso_max_iter},
            {"lasso_tol", c.lasso_tol},
            {"pilots", {{"t_frame", c.pilots.t_frame}, {"t_est", c.pilots.t_est}, {"symbols", c.pilots.symbols}}},
            {"accounting", {{"t_frame", c.accounting.t_frame}, {"bandwidth_hz", c.accounting.bandwidth_hz}, {"gps_bits", c.accounting.gps_bits}}},
            {"test_fraction", c.test_fraction},
            {"split_seed", c.split_seed},
            {"seed", c.seed}};
}

// Every test user is estimated on all frames; metrics and SE cover frames
// 2..F only. Sensing methods keep transmitting on the previous frame's beams
// during acquisition; pilot methods lose the acquisition interval.
inline Report run_benchmark(const Dataset& d, const FlowModel* model, const BenchConfig& cfg) {
    cfg.validate();
    Report rep;
    rep.config = to_json(cfg);
    const Split split = split_by_user(d, cfg.test_fraction, cfg.split_seed);
    const std::vector<std::size_t>& test = split.test;

    // (user, frame) -> dataset row, test users only
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> at;
    for (auto i : test) at[{static_cast<std::size_t>(d.user_ids[i]), static_cast<std::size_t>(d.frame_indices[i])}] = i;

    std::vector<std::size_t> val_rows;
    for (auto i : unblocked(d, split.train)) {
        if (val_rows.size() >= cfg.lasso_validation) break;
        val_rows.push_back(i);
    }

    KnnDatabase knn_db;
    bool knn_ready = false;
    const auto points = sweep_points(cfg);
    rep.accounting = io::json::array();

    for (const auto& method : cfg.methods) {
        if (method == "flow" && !model) {
            rep.errors[method] = "no flow checkpoint supplied";
            continue;
        }
        if (method == "knn" && !knn_ready) {
            knn_db = knn_build(d, split.train);
            knn_ready = true;
        }
        std::map<std::size_t, std::vector<ChannelMatrix>> flow_cache;  // K -> estimates over test rows
        std::vector<ChannelMatrix> knn_cache;

        for (std::size_t pi = 0; pi < points.size(); ++pi) {
            const SweepPoint& sp = points[pi];
            PilotConfig pc = cfg.pilots;
            pc.t_acq = sp.tca_ms * 1e-3;
            pc.snr_db = sp.snr_db;
            FrameAccounting acct = cfg.accounting;
            acct.t_acq = sp.tca_ms * 1e-3;
            const double snr = db_to_linear(sp.snr_db);

            Aggregate agg;
            agg.method = method;
            agg.var = sp.var;
            agg.value = sp.value;

            auto pilot_seed = [&](std::size_t row) { return mix_seed(cfg.seed, (pi << 32) + row); };

            if (method == "lasso") {
                double best_frac = cfg.lasso_grid.front(), best_err = std::numeric_limits<double>::infinity();
                for (double frac : cfg.lasso_grid) {
                    double err = 0.0;
                    for (auto i : val_rows) {
                        const ChannelMatrix h = d.channel(i);
                        const PilotObservation o = simulate_pilots(h, pc, mix_seed(cfg.seed ^ 0x5a5aULL, (pi << 32) + i));
                        LassoOptions lo{cfg.lasso_max_iter, cfg.lasso_tol, false};
                        err += nmse(h, lasso_estimate(o, frac * lasso_lambda_max(o), lo).h).linear;
                    }
                    if (err < best_err) {
                        best_err = err;
                        best_frac = frac;
                    }
                }
                agg.lasso_lambda = best_frac;
            }

            // Estimates for every test row at this sweep point.
            std::vector<ChannelMatrix> est(test.size());
            if (method == "flow") {
                auto it = flow_cache.find(sp.flow_K);
                if (it == flow_cache.end()) {
                    it = flow_cache.emplace(sp.flow_K, infer_rows(model->encoder, model->field, d, test, sp.flow_K)).first;
                }
                est = it->second;
                rep.accounting.push_back({{"method", method}, {"var", sp.var}, {"value", sp.value}, {"encoder_calls", 1},
                                          {"velocity_calls", sp.flow_K}});
            } else if (method == "knn") {
                if (knn_cache.empty()) {
                    knn_cache.resize(test.size());
                    for (std::size_t k = 0; k < test.size(); ++k) {
                        const std::size_t i = test[k];
                        knn_cache[k] = knn_infer(knn_db, Vec2{d.coords[2 * i], d.coords[2 * i + 1]}, cfg.knn_k);
                    }
                }
                est = knn_cache;
            } else {
                parallel_for(test.size(), [&](std::size_t k) {
                    const std::size_t i = test[k];
                    const ChannelMatrix h = d.channel(i);
                    const PilotObservation o = simulate_pilots(h, pc, pilot_seed(i));
                    if (method == "ls") {
                        est[k] = ls_estimate(o);
                    } else {
                        LassoOptions lo{cfg.lasso_max_iter, cfg.lasso_tol, false};
                        est[k] = lasso_estimate(o, agg.lasso_lambda * lasso_lambda_max(o), lo).h;
                    }
                });
            }
            std::map<std::size_t, std::size_t> pos;  // dataset row -> index into test
            for (std::size_t k = 0; k < test.size(); ++k) pos[test[k]] = k;

            for (std::size_t k = 0; k < test.size(); ++k) {
                const std::size_t i = test[k];
                const std::size_t frame = static_cast<std::size_t>(d.frame_indices[i]);
                if (frame == 0 || d.blocked(i)) continue;  // first frame has no previous beams
                const std::size_t user = static_cast<std::size_t>(d.user_ids[i]);
                const ChannelMatrix truth = d.channel(i);
                SampleRow r;
                r.method = method;
                r.var = sp.var;
                r.value = sp.value;
                r.row = i;
                r.user_id = user;
                r.frame = frame + 1;  // 1-based frame number in reports
                r.nmse_linear = nmse(truth, est[k]).linear;
                r.cossim = detail::safe_cossim(truth, est[k]);
                const BeamPair cur = beam_search(est[k]);
                const double r_cur = instantaneous_se(cur.w, cur.f, truth, snr);
                if (detail::is_sensing(method)) {
                    const auto prev_it = at.find({user, frame - 1});
                    const ChannelMatrix& prev_est = est[pos.at(prev_it->second)];
                    const BeamPair prev = beam_search(prev_est);
                    r.se = sensing_aided_se(instantaneous_se(prev.w, prev.f, truth, snr), r_cur, acct);
                } else {
                    r.se = pilot_based_se(r_cur, acct);
                }
                agg.count += 1;
                agg.nmse_linear += r.nmse_linear;
                agg.cossim += r.cossim;
                agg.se += r.se;
                rep.samples.push_back(r);
            }
            if (agg.count) {
                const double n = static_cast<double>(agg.count);
                agg.nmse_linear /= n;
                agg.cossim /= n;
                agg.se /= n;
            }
            agg.nmse_db = to_db(agg.nmse_linear);
            rep.aggregates.push_back(agg);
        }
    }
    return rep;
}

inline io::json to_json(const Aggregate& a) {
    io::json j = {{"method", a.method}, {"var", a.var},       {"value", a.value},   {"count", a.count},
                  {"nmse_linear", a.nmse_linear}, {"nmse_db", a.nmse_db}, {"cossim", a.cossim}, {"se", a.se}};
    if (!std::isnan(a.lasso_lambda)) j["lasso_lambda_fraction"] = a.lasso_lambda;
    return j;
}

// report.json, results.csv (one row per method x sweep point) and
// samples.csv (per-sample rows the aggregates are computed from).
inline void write_report(const Report& r, const std::string& dir, const io::json& extra = io::json::object()) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path p(dir);
    io::json j;
    j["config"] = r.config;
    j["run"] = extra;
    j["aggregates"] = io::json::array();
    for (const auto& a : r.aggregates) j["aggregates"].push_back(to_json(a));
    j["errors"] = r.errors;
    j["step_accounting"] = r.accounting;
    {
        std::ofstream os(p / "report.json", std::ios::trunc);
        if (!os) throw IoError("cannot write report.json in '" + dir + "'");
        os << j.dump(2) << '\n';
    }
    {
        std::ofstream os(p / "results.csv", std::ios::trunc);
        if (!os) throw IoError("cannot write results.csv in '" + dir + "'");
        os << "method,sweep_var,value,nmse_db,cossim,se\n";
        for (const auto& a : r.aggregates) {
            os << a.method << ',' << a.var << ',' << io::fmt_double(a.value) << ',' << io::fmt_double(a.nmse_db) << ','
               << io::fmt_double(a.cossim) << ',' << io::fmt_double(a.se) << '\n';
        }
    }
    {
        std::ofstream os(p / "samples.csv", std::ios::trunc);
        if (!os) throw IoError("cannot write samples.csv in '" + dir + "'");
        os << "method,sweep_var,value,row,user_id,frame,nmse_linear,cossim,se\n";
        for (const auto& s : r.samples) {
            os << s.method << ',' << s.var << ',' << io::fmt_double(s.value) << ',' << s.row << ',' << s.user_id << ',' << s.frame << ','
               << io::fmt_double(s.nmse_linear) << ',' << io::fmt_double(s.cossim) << ',' << io::fmt_double(s.se) << '\n';
        }
    }
}

}  // namespace xfcsi
