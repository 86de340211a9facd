// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "xfcsi/dataset.hpp"
#include "xfcsi/encoder.hpp"
#include "xfcsi/velocity_field.hpp"

namespace xfcsi {

// v(x, t) for a state tensor (single [2,U,B] or batched [N,2,U,B]).
template <class T>
using FieldFn = std::function<nn::Tensor<T>(const nn::Tensor<T>& x, double t)>;

template <class T>
struct IntegratorTrace {
    std::vector<nn::Tensor<T>> states;  // x_{k h}, k = 0..K
    double h = 0.0;
    std::size_t velocity_calls = 0;
};

namespace detail {

// a + c * b, elementwise in double then cast.
template <class T>
nn::Tensor<T> axpy(const nn::Tensor<T>& a, double c, const nn::Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("integrator: velocity shape " + nn::shape_str(b.shape()) + " vs state " + nn::shape_str(a.shape()));
    nn::Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(static_cast<double>(a[i]) + c * static_cast<double>(b[i]));
    return out;
}

inline void check_step(double h) {
    if (!(h > 0.0 && h <= 1.0)) throw ContractError("integrator: step size must lie in (0,1]");
}

}  // namespace detail

// x_h = x0 + h v(x0, 0). `v0_out` receives v(x0, 0) for the first AB2 step.
template <class T>
nn::Tensor<T> euler_init(const nn::Tensor<T>& x0, const FieldFn<T>& v, double h, nn::Tensor<T>* v0_out = nullptr) {
    detail::check_step(h);
    nn::Tensor<T> v0 = v(x0, 0.0);
    nn::Tensor<T> out = detail::axpy(x0, h, v0);
    if (v0_out) *v0_out = std::move(v0);
    return out;
}

// x_{(k+1)h} = x_{kh} + h (3/2 v(x_{kh}, kh) - 1/2 v_prev). `v_out` receives
// v(x_{kh}, kh) so the next step can reuse it.
template <class T>
nn::Tensor<T> ab2_step(const nn::Tensor<T>& x_kh, const nn::Tensor<T>& v_prev, const FieldFn<T>& v, std::size_t k, double h,
                       nn::Tensor<T>* v_out = nullptr) {
    detail::check_step(h);
    if (k < 1) throw ContractError("ab2_step: k must be >= 1 (step 0 is the Euler start)");
    if (v_prev.numel() == 0) throw ContractError("ab2_step: previous velocity is missing");
    if (v_prev.shape() != x_kh.shape()) throw ShapeError("ab2_step: previous velocity shape differs from state");
    nn::Tensor<T> vk = v(x_kh, static_cast<double>(k) * h);
    if (vk.shape() != x_kh.shape()) throw ShapeError("ab2_step: velocity shape differs from state");
    nn::Tensor<T> out(x_kh.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<T>(static_cast<double>(x_kh[i]) +
                                h * (1.5 * static_cast<double>(vk[i]) - 0.5 * static_cast<double>(v_prev[i])));
    }
    if (v_out) *v_out = std::move(vk);
    return out;
}

// Euler start followed by K-1 Adams-Bashforth steps over t in [0, 1].
template <class T>
IntegratorTrace<T> integrate(const nn::Tensor<T>& x0, const FieldFn<T>& v, std::size_t K) {
    if (K < 1) throw ContractError("integrate: K must be >= 1");
    IntegratorTrace<T> tr;
    tr.h = 1.0 / static_cast<double>(K);
    tr.states.reserve(K + 1);
    tr.states.push_back(x0);
    nn::Tensor<T> v_prev;
    tr.states.push_back(euler_init(x0, v, tr.h, &v_prev));
    tr.velocity_calls = 1;
    for (std::size_t k = 1; k < K; ++k) {
        nn::Tensor<T> vk;
        tr.states.push_back(ab2_step(tr.states.back(), v_prev, v, k, tr.h, &vk));
        v_prev = std::move(vk);
        ++tr.velocity_calls;
    }
    return tr;
}

template <class T>
FieldFn<T> field_fn(const VelocityField<T>& field) {
    return [&field](const nn::Tensor<T>& x, double t) {
        if (x.rank() == 3) return field.velocity(x, t);
        return field.velocity_batch(x, t);
    };
}

// Stacked angular tensor [2,U,B] (or one slice of a batch) -> spatial channel.
template <class T>
ChannelMatrix state_to_channel(const nn::Tensor<T>& x, std::size_t offset = 0) {
    const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
    ChannelTensor ct;
    ct.shape = {2, r, c};
    ct.values.resize(2 * r * c);
    for (std::size_t i = 0; i < ct.values.size(); ++i) ct.values[i] = static_cast<double>(x[offset + i]);
    return to_spatial(unstack_complex(ct, Domain::angular));
}

template <class T>
nn::Tensor<T> channel_to_state(const ChannelMatrix& h) {
    const ChannelTensor ct = stack_real(h.domain == Domain::angular ? h : to_angular(h));
    nn::Tensor<T> out({2, ct.rows(), ct.cols()});
    for (std::size_t i = 0; i < ct.values.size(); ++i) out[i] = static_cast<T>(ct.values[i]);
    return out;
}

// Encoder inputs for dataset rows. Clouds are divided by the scene half
// extent; coordinates stay in metres (they are sinusoidally embedded).
template <class T>
EncoderBatch<T> encoder_batch(const Dataset& d, const std::vector<std::size_t>& idx) {
    const std::size_t n = idx.size();
    const double half = d.header.at("config").value("half_extent_m", 50.0);
    const T cloud_scale = static_cast<T>(1.0 / half);
    EncoderBatch<T> b;
    b.images = nn::Tensor<T>({n, 3, d.image_size, d.image_size});
    b.clouds = nn::Tensor<T>({n, 3, d.points});
    b.coords = nn::Tensor<T>({n, 2});
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t i = idx[s];
        d.check(i);
        for (std::size_t e = 0; e < d.image_numel(); ++e) b.images[s * d.image_numel() + e] = static_cast<T>(d.images[i * d.image_numel() + e]);
        for (std::size_t e = 0; e < d.cloud_numel(); ++e)
            b.clouds[s * d.cloud_numel() + e] = static_cast<T>(d.clouds[i * d.cloud_numel() + e]) * cloud_scale;
        b.coords[2 * s] = static_cast<T>(d.coords[2 * i]);
        b.coords[2 * s + 1] = static_cast<T>(d.coords[2 * i + 1]);
    }
    return b;
}

// Ground-truth stacked angular channels for dataset rows, [N,2,U,B].
template <class T>
nn::Tensor<T> target_batch(const Dataset& d, const std::vector<std::size_t>& idx) {
    const std::size_t m = d.channel_numel();
    nn::Tensor<T> out({idx.size(), 2, d.n_ue, d.n_bs});
    for (std::size_t s = 0; s < idx.size(); ++s) {
        const auto st = channel_to_state<T>(d.channel(idx[s]));
        std::copy(st.values().begin(), st.values().end(), out.data() + s * m);
    }
    return out;
}

template <class T>
struct Inference {
    ChannelMatrix h_hat;  // spatial
    IntegratorTrace<T> trace;
};

// MAP start from the encoder mean, then K integrator steps; the terminal
// state is mapped back to the spatial domain.
template <class T>
Inference<T> infer_channel(const Encoder<T>& enc, const VelocityField<T>& field, const nn::Tensor<T>& image,
                           const nn::Tensor<T>& cloud, const nn::Tensor<T>& coord, std::size_t K) {
    const LatentGaussian<T> g = enc.encode(image, cloud, coord);
    Inference<T> out;
    out.trace = integrate<T>(map_mode(g), field_fn(field), K);
    out.h_hat = state_to_channel(out.trace.states.back());
    return out;
}

// Batched inference over dataset rows. Returns, per row, the spatial estimate
// and (optionally) every intermediate state mapped to the spatial domain.
template <class T>
std::vector<ChannelMatrix> infer_rows(const Encoder<T>& enc, const VelocityField<T>& field, const Dataset& d,
                                      const std::vector<std::size_t>& rows, std::size_t K, std::size_t batch = 128,
                                      std::vector<std::vector<ChannelMatrix>>* steps = nullptr) {
    std::vector<ChannelMatrix> out(rows.size());
    if (steps) steps->assign(rows.size(), {});
    const std::size_t m = d.channel_numel();
    for (std::size_t lo = 0; lo < rows.size(); lo += batch) {
        const std::size_t hi = std::min(rows.size(), lo + batch);
        std::vector<std::size_t> idx(rows.begin() + lo, rows.begin() + hi);
        const LatentGaussian<T> g = enc.encode(encoder_batch<T>(d, idx));
        const IntegratorTrace<T> tr = integrate<T>(map_mode(g), field_fn(field), K);
        for (std::size_t s = 0; s < idx.size(); ++s) {
            out[lo + s] = state_to_channel(tr.states.back(), s * m);
            if (steps) {
                for (const auto& st : tr.states) (*steps)[lo + s].push_back(state_to_channel(st, s * m));
            }
        }
    }
    return out;
}

struct EvalSummary {
    std::size_t count = 0;
    double nmse_linear = 0.0;  // mean of per-sample linear NMSE
    double nmse_db = 0.0;      // 10 log10 of nmse_linear
    double cossim = 0.0;
    std::vector<double> step_nmse_db;  // per integrator state, when requested
};

// Rows whose ground truth has no propagation path are skipped (NMSE is
// undefined for a zero channel).
inline std::vector<std::size_t> unblocked(const Dataset& d, const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> out;
    for (auto i : rows)
        if (!d.blocked(i)) out.push_back(i);
    return out;
}

template <class T>
EvalSummary evaluate(const Encoder<T>& enc, const VelocityField<T>& field, const Dataset& d, const std::vector<std::size_t>& rows,
                     std::size_t K, bool per_step = false) {
    const auto use = unblocked(d, rows);
    EvalSummary s;
    s.count = use.size();
    if (use.empty()) throw MetricError("evaluate: no unblocked rows to score");
    std::vector<std::vector<ChannelMatrix>> steps;
    const auto est = infer_rows(enc, field, d, use, K, 128, per_step ? &steps : nullptr);
    std::vector<double> step_acc(per_step ? K + 1 : 0, 0.0);
    for (std::size_t i = 0; i < use.size(); ++i) {
        const ChannelMatrix truth = d.channel(use[i]);
        s.nmse_linear += nmse(truth, est[i]).linear;
        s.cossim += est[i].frobenius_sq() > 0.0 ? cosine_similarity(truth, est[i]) : 0.0;
        for (std::size_t k = 0; k < step_acc.size(); ++k) step_acc[k] += nmse(truth, steps[i][k]).linear;
    }
    const double n = static_cast<double>(use.size());
    s.nmse_linear /= n;
    s.cossim /= n;
    s.nmse_db = to_db(s.nmse_linear);
    for (double a : step_acc) s.step_nmse_db.push_back(to_db(a / n));
    return s;
}

}  // namespace xfcsi
