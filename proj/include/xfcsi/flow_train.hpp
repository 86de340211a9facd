// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/model.hpp"
#include "xfcsi/nn/adam.hpp"
#include "xfcsi/ode_infer.hpp"

namespace xfcsi {

namespace detail {

inline void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t must lie in [0,1], got " + std::to_string(t));
}

template <class T>
void check_pair(const nn::Tensor<T>& a, const nn::Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + nn::shape_str(a.shape()) + " and " + nn::shape_str(b.shape()) + " differ");
    }
}

}  // namespace detail

// x_t = t x1 + (1 - t) x0 + sigma_min eps
template <class T>
nn::Tensor<T> interpolate(const nn::Tensor<T>& x0, const nn::Tensor<T>& x1, double t, double sigma_min, const nn::Tensor<T>& eps) {
    detail::check_pair(x0, x1, "interpolate");
    detail::check_time(t);
    if (sigma_min != 0.0) detail::check_pair(x0, eps, "interpolate");
    nn::Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = t * static_cast<double>(x1[i]) + (1.0 - t) * static_cast<double>(x0[i]);
        if (sigma_min != 0.0) v += sigma_min * static_cast<double>(eps[i]);
        out[i] = static_cast<T>(v);
    }
    return out;
}

template <class T>
nn::Tensor<T> conditional_velocity(const nn::Tensor<T>& x0, const nn::Tensor<T>& x1) {
    detail::check_pair(x0, x1, "conditional_velocity");
    nn::Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x1[i] - x0[i];
    return out;
}

// Batched network callable: x [S,...], one t per sample.
template <class T>
using VelocityFn = std::function<nn::Var<T>(const nn::Var<T>& x, const std::vector<double>& t)>;

// Differentiable batched path point; x0 may carry gradient.
template <class T>
nn::Var<T> interpolate_batch(const nn::Var<T>& x0, const nn::Var<T>& x1, const std::vector<double>& t, double sigma_min = 0.0,
                             const nn::Tensor<T>* eps = nullptr) {
    if (x0.shape() != x1.shape()) throw ShapeError("interpolate: batch shapes differ");
    if (x0.value().rank() < 1 || t.size() != x0.dim(0)) throw ShapeError("interpolate: need one t per sample");
    nn::Tensor<T> tt({t.size()}), omt({t.size()});
    for (std::size_t s = 0; s < t.size(); ++s) {
        detail::check_time(t[s]);
        tt[s] = static_cast<T>(t[s]);
        omt[s] = static_cast<T>(1.0 - t[s]);
    }
    nn::Var<T> xt = nn::add(nn::mul_rows(x1, nn::Var<T>::constant(tt)), nn::mul_rows(x0, nn::Var<T>::constant(omt)));
    if (sigma_min != 0.0) {
        if (!eps || eps->shape() != x0.shape()) throw ShapeError("interpolate: sigma_min > 0 needs eps shaped like x0");
        xt = nn::add(xt, nn::scale(nn::Var<T>::constant(*eps), static_cast<T>(sigma_min)));
    }
    return xt;
}

// (1/S) sum_s || v(x_t^s, t_s) - (x1^s - x0^s) ||^2
template <class T>
nn::Var<T> cfm_loss(const nn::Var<T>& x0, const nn::Var<T>& x1, const std::vector<double>& t, const VelocityFn<T>& v,
                    double sigma_min = 0.0, const nn::Tensor<T>* eps = nullptr) {
    if (x0.value().rank() < 1 || x0.dim(0) == 0) throw ContractError("cfm_loss: empty batch");
    const std::size_t s = x0.dim(0);
    nn::Var<T> xt = interpolate_batch(x0, x1, t, sigma_min, eps);
    nn::Var<T> pred = v(xt, t);
    if (pred.shape() != x0.shape()) throw ShapeError("cfm_loss: network output " + nn::shape_str(pred.shape()) + " vs state");
    nn::Var<T> resid = nn::sub(pred, nn::sub(x1, x0));
    return nn::scale(nn::sum(nn::square(resid)), static_cast<T>(1.0 / static_cast<double>(s)));
}

// Contrastive term without the S >= 2 guard. With S = 1 there are no negatives
// and the value is identically 0; exposed for the degenerate-case check.
template <class T>
nn::Var<T> contrastive_term_unchecked(const nn::Var<T>& x0, const nn::Var<T>& x1, const Temperature<T>& tau) {
    if (x0.shape() != x1.shape() || x0.value().rank() < 1) throw ShapeError("contrastive: batch shapes differ");
    const std::size_t s = x0.dim(0), d = x0.numel() / std::max<std::size_t>(s, 1);
    nn::Var<T> a = nn::l2_normalize_rows(nn::reshape(x0, nn::Shape{s, d}));
    nn::Var<T> b = nn::l2_normalize_rows(nn::reshape(x1, nn::Shape{s, d}));
    nn::Var<T> sims = nn::matmul_nt(a, b);  // sims[i][k] = sim(x0_i, x1_k)
    nn::Var<T> inv_tau = nn::exp(nn::scale(tau.raw.var, T(-1)));
    return nn::softmax_xent_diag(nn::mul_scalar(sims, inv_tau));
}

template <class T>
nn::Var<T> contrastive_term(const nn::Var<T>& x0, const nn::Var<T>& x1, const Temperature<T>& tau) {
    if (x0.value().rank() < 1 || x0.dim(0) < 2) throw ContractError("contrastive loss needs S >= 2 (no negatives otherwise)");
    return contrastive_term_unchecked(x0, x1, tau);
}

// -(1/S) sum_s sum_e (1 + sigma_log - mu^2 - exp(sigma_log)); twice the usual
// Gaussian KL to N(0, I).
template <class T>
nn::Var<T> kl_term(const LatentGaussian<T>& g) {
    if (g.mu.shape() != g.sigma_log.shape() || g.mu.value().rank() < 1 || g.mu.dim(0) == 0) {
        throw ShapeError("kl: mu and sigma_log must share a non-empty batch shape");
    }
    const std::size_t s = g.mu.dim(0);
    nn::Var<T> inner = nn::sub(nn::sub(nn::add_scalar(g.sigma_log, T(1)), nn::square(g.mu)), nn::exp(g.sigma_log));
    return nn::scale(nn::sum(inner), static_cast<T>(-1.0 / static_cast<double>(s)));
}

template <class T>
struct AlignmentTerms {
    nn::Var<T> contrastive, kl, total;
};

template <class T>
AlignmentTerms<T> alignment_loss(const nn::Var<T>& x0, const nn::Var<T>& x1, const Temperature<T>& tau, double lambda,
                                 const LatentGaussian<T>& latents, bool use_contrastive = true) {
    if (lambda < 0.0) throw ConfigError("alignment: lambda must be >= 0");
    AlignmentTerms<T> out;
    out.kl = kl_term(latents);
    out.contrastive = use_contrastive ? contrastive_term(x0, x1, tau) : nn::Var<T>::constant(nn::Tensor<T>({1}));
    out.total = out.contrastive;
    if (lambda != 0.0) out.total = nn::add(out.total, nn::scale(out.kl, static_cast<T>(lambda)));
    return out;
}

struct LossSettings {
    double lambda = 1e-4;
    double sigma_min = 0.0;
    bool contrastive = true;
};

template <class T>
struct LossTerms {
    nn::Var<T> cfm, contrastive, kl, total;
};

// One batch of the joint objective: encode, reparameterise, flow-match, align.
template <class T>
LossTerms<T> total_loss(const Encoder<T>& enc, const VelocityField<T>& field, const Temperature<T>& tau, const EncoderBatch<T>& batch,
                        const nn::Tensor<T>& x1, const std::vector<double>& t, const nn::Tensor<T>& latent_eps,
                        const LossSettings& ls = {}, const nn::Tensor<T>* path_eps = nullptr) {
    const LatentGaussian<T> g = enc.encode(batch);
    nn::Var<T> x0 = sample_latent(g, latent_eps);
    nn::Var<T> target = nn::Var<T>::constant(x1);
    VelocityFn<T> v = [&field](const nn::Var<T>& x, const std::vector<double>& ts) { return field.forward(x, ts); };
    LossTerms<T> out;
    out.cfm = cfm_loss(x0, target, t, v, ls.sigma_min, path_eps);
    AlignmentTerms<T> a = alignment_loss(x0, target, tau, ls.lambda, g, ls.contrastive);
    out.contrastive = a.contrastive;
    out.kl = a.kl;
    out.total = nn::add(out.cfm, a.total);
    return out;
}

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 40;
    double lr = 1e-3;
    LossSettings loss;
    double test_fraction = 0.1;
    std::uint64_t seed = 7;
    std::size_t eval_every = 10;  // epochs between test-set evaluations (last epoch always)
    std::size_t eval_K = 7;
    ModelConfig model;

    void validate() const {
        if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (contrastive loss needs negatives)");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
        if (loss.lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
        if (loss.sigma_min < 0.0) throw ConfigError("train: sigma_min must be >= 0");
        if (eval_K < 1) throw ConfigError("train: eval_K must be >= 1");
        model.validate();
    }
};

inline io::json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"lambda", c.loss.lambda},
            {"sigma_min", c.loss.sigma_min},
            {"contrastive", c.loss.contrastive},
            {"test_fraction", c.test_fraction},
            {"seed", c.seed},
            {"eval_every", c.eval_every},
            {"eval_K", c.eval_K},
            {"model", to_json(c.model)}};
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double cfm = 0, contrastive = 0, kl = 0, total = 0;
    double test_nmse_db = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<double> step_loss;  // total loss per optimiser step
};

struct TrainResult {
    std::unique_ptr<FlowModel> model;
    TrainHistory history;
    Split split;
};

// Trailing moving average with the given window (shorter at the start).
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= window) acc -= v[i - window];
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

// Joint training of encoder, velocity field and temperature with Adam. Each
// epoch is one pass over the shuffled training rows; the trailing partial
// batch is kept when it has at least two rows.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (data.count == 0) throw ContractError("train: dataset is empty");
    if (cfg.model.encoder.n_ue != data.n_ue || cfg.model.encoder.n_bs != data.n_bs || cfg.model.encoder.points != data.points ||
        cfg.model.encoder.image_size != data.image_size) {
        throw ConfigError("train: model dimensions do not match the dataset");
    }
    TrainResult res;
    res.split = split_by_user(data, cfg.test_fraction, cfg.seed);
    const std::vector<std::size_t> train_rows = unblocked(data, res.split.train);
    if (train_rows.size() < 2) throw ContractError("train: fewer than two usable training rows");
    res.model = std::make_unique<FlowModel>(cfg.model);
    FlowModel& m = *res.model;
    auto params = m.parameters();
    nn::Adam<float> opt(params);

    const nn::Tensor<float> all_targets = target_batch<float>(data, train_rows);
    const std::size_t per = data.channel_numel();
    std::mt19937_64 rng(mix_seed(cfg.seed, 101));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    std::vector<std::size_t> order(train_rows.size());
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = e;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            if (hi - lo < 2) break;
            const std::size_t s = hi - lo;
            std::vector<std::size_t> rows(s);
            nn::Tensor<float> x1({s, 2, data.n_ue, data.n_bs});
            for (std::size_t k = 0; k < s; ++k) {
                rows[k] = train_rows[order[lo + k]];
                std::copy(all_targets.data() + order[lo + k] * per, all_targets.data() + (order[lo + k] + 1) * per, x1.data() + k * per);
            }
            std::vector<double> t(s);
            for (auto& ti : t) ti = unif(rng);
            nn::Tensor<float> eps(x1.shape());
            for (auto& v : eps.values()) v = gauss(rng);
            nn::Tensor<float> path_eps;
            if (cfg.loss.sigma_min != 0.0) {
                path_eps = nn::Tensor<float>(x1.shape());
                for (auto& v : path_eps.values()) v = gauss(rng);
            }

            nn::zero_grad(params);
            LossTerms<float> L = total_loss(m.encoder, m.field, m.tau, encoder_batch<float>(data, rows), x1, t, eps, cfg.loss,
                                            cfg.loss.sigma_min != 0.0 ? &path_eps : nullptr);
            const double total = L.total.value()[0];
            const double cfm = L.cfm.value()[0], con = L.contrastive.value()[0], kl = L.kl.value()[0];
            if (!std::isfinite(total)) {
                throw DivergenceError("training diverged at epoch " + std::to_string(e) + ", batch " + std::to_string(batches + 1) +
                                      ": cfm=" + io::fmt_double(cfm) + " contrastive=" + io::fmt_double(con) +
                                      " kl=" + io::fmt_double(kl) + " total=" + io::fmt_double(total));
            }
            nn::backward(L.total);
            opt.step(cfg.lr);
            rec.cfm += cfm;
            rec.contrastive += con;
            rec.kl += kl;
            rec.total += total;
            res.history.step_loss.push_back(total);
            ++batches;
        }
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        rec.cfm /= nb;
        rec.contrastive /= nb;
        rec.kl /= nb;
        rec.total /= nb;
        if (!res.split.test.empty() && ((cfg.eval_every && e % cfg.eval_every == 0) || e == cfg.epochs)) {
            rec.test_nmse_db = evaluate(m.encoder, m.field, data, res.split.test, cfg.eval_K).nmse_db;
        }
        res.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return res;
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << "epoch,cfm_loss,contrastive_loss,kl_loss,total,test_nmse_db\n";
    for (const auto& r : h.epochs) {
        os << r.epoch << ',' << io::fmt_double(r.cfm) << ',' << io::fmt_double(r.contrastive) << ',' << io::fmt_double(r.kl) << ','
           << io::fmt_double(r.total) << ',' << io::fmt_double(r.test_nmse_db) << '\n';
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace xfcsi
