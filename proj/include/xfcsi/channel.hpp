// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xfcsi/common.hpp"

namespace xfcsi {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

enum class Domain { spatial, angular };

inline const char* to_string(Domain d) { return d == Domain::spatial ? "spatial" : "angular"; }

// Complex N_UE x N_BS MIMO channel, tagged with the domain it lives in.
struct ChannelMatrix {
    CMatrix entries;
    Domain domain = Domain::spatial;

    ChannelMatrix() = default;
    ChannelMatrix(CMatrix m, Domain d) : entries(std::move(m)), domain(d) {}

    static ChannelMatrix zeros(int n_ue, int n_bs, Domain d = Domain::spatial) {
        return {CMatrix::Zero(n_ue, n_bs), d};
    }

    int n_ue() const { return static_cast<int>(entries.rows()); }
    int n_bs() const { return static_cast<int>(entries.cols()); }
    double frobenius_sq() const { return entries.squaredNorm(); }
    bool finite() const { return entries.allFinite(); }
};

// Real 2 x N_UE x N_BS stacking; slice 0 real part, slice 1 imaginary part.
struct ChannelTensor {
    std::vector<std::size_t> shape;  // {2, n_ue, n_bs}
    std::vector<double> values;      // row-major

    std::size_t rows() const { return shape.size() == 3 ? shape[1] : 0; }
    std::size_t cols() const { return shape.size() == 3 ? shape[2] : 0; }
    double& at(std::size_t s, std::size_t r, std::size_t c) {
        return values[(s * shape[1] + r) * shape[2] + c];
    }
    double at(std::size_t s, std::size_t r, std::size_t c) const {
        return values[(s * shape[1] + r) * shape[2] + c];
    }
};

// Unitary DFT matrix, [F]_{m,k} = exp(j 2 pi m k / N) / sqrt(N) with 0-based
// indices (identical to the 1-based (m-1)(k-1) form).
struct DftMatrix {
    CMatrix entries;
    int size() const { return static_cast<int>(entries.rows()); }
};

inline DftMatrix dft_matrix(int n) {
    if (n < 1) throw InvalidDimension("dft_matrix: N must be >= 1, got " + std::to_string(n));
    DftMatrix f;
    f.entries.resize(n, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int m = 0; m < n; ++m) {
        for (int k = 0; k < n; ++k) {
            // Reduce the exponent mod N before scaling to keep the phase exact.
            long long idx = (static_cast<long long>(m) * k) % n;
            double phase = 2.0 * kPi * static_cast<double>(idx) / n;
            f.entries(m, k) = std::polar(scale, phase);
        }
    }
    return f;
}

inline ChannelMatrix to_angular(const ChannelMatrix& h) {
    if (h.domain != Domain::spatial) throw DomainError("to_angular: expected a spatial-domain channel");
    const DftMatrix f_ue = dft_matrix(h.n_ue());
    const DftMatrix f_bs = dft_matrix(h.n_bs());
    return {f_ue.entries.adjoint() * h.entries * f_bs.entries, Domain::angular};
}

inline ChannelMatrix to_spatial(const ChannelMatrix& h_ad) {
    if (h_ad.domain != Domain::angular) throw DomainError("to_spatial: expected an angular-domain channel");
    const DftMatrix f_ue = dft_matrix(h_ad.n_ue());
    const DftMatrix f_bs = dft_matrix(h_ad.n_bs());
    return {f_ue.entries * h_ad.entries * f_bs.entries.adjoint(), Domain::spatial};
}

inline ChannelTensor stack_real(const ChannelMatrix& h) {
    ChannelTensor t;
    const auto r = static_cast<std::size_t>(h.n_ue());
    const auto c = static_cast<std::size_t>(h.n_bs());
    t.shape = {2, r, c};
    t.values.resize(2 * r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const cd v = h.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            t.at(0, i, j) = v.real();
            t.at(1, i, j) = v.imag();
        }
    }
    return t;
}

// The stacked tensor does not carry a domain; the network always works on
// angular-domain channels, which is the default here.
inline ChannelMatrix unstack_complex(const ChannelTensor& t, Domain d = Domain::angular) {
    if (t.shape.size() != 3 || t.shape[0] != 2) {
        throw ShapeError("unstack_complex: leading dimension must be 2");
    }
    if (t.values.size() != 2 * t.shape[1] * t.shape[2]) {
        throw ShapeError("unstack_complex: value count does not match shape");
    }
    ChannelMatrix h = ChannelMatrix::zeros(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]), d);
    for (std::size_t i = 0; i < t.shape[1]; ++i) {
        for (std::size_t j = 0; j < t.shape[2]; ++j) {
            h.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cd(t.at(0, i, j), t.at(1, i, j));
        }
    }
    return h;
}

struct Nmse {
    double linear = 0.0;
    double db = 0.0;  // -infinity when linear == 0
};

inline constexpr double kDbFloor = -100.0;

inline double to_db(double linear) {
    if (linear <= 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(linear);
}

// dB value for tables: -inf (perfect recovery) is clamped to kDbFloor.
inline double clamp_db(double db) { return std::isfinite(db) ? std::max(db, kDbFloor) : kDbFloor; }

inline void require_same_shape(const ChannelMatrix& a, const ChannelMatrix& b, const char* what) {
    if (a.n_ue() != b.n_ue() || a.n_bs() != b.n_bs()) {
        throw ShapeError(std::string(what) + ": channel shapes differ");
    }
}

inline Nmse nmse(const ChannelMatrix& truth, const ChannelMatrix& est) {
    require_same_shape(truth, est, "nmse");
    const double denom = truth.frobenius_sq();
    if (!(denom > 0.0)) throw MetricError("nmse: ground-truth channel has zero norm");
    Nmse out;
    out.linear = (truth.entries - est.entries).squaredNorm() / denom;
    out.db = to_db(out.linear);
    return out;
}

// ||H^H Hhat||_F / (||H||_F ||Hhat||_F). Equals 1 only for rank-1 H with a
// scaled estimate; multi-rank channels score below 1 even when exact.
inline double cosine_similarity(const ChannelMatrix& truth, const ChannelMatrix& est) {
    require_same_shape(truth, est, "cosine_similarity");
    const double nt = truth.entries.norm();
    const double ne = est.entries.norm();
    if (!(nt > 0.0) || !(ne > 0.0)) throw MetricError("cosine_similarity: zero-norm operand");
    return (truth.entries.adjoint() * est.entries).norm() / (nt * ne);
}

// Half-wavelength ULA response, a(theta)_n = exp(j pi n sin(theta)) / sqrt(N).
inline CVector steering_vector(int n, double theta) {
    CVector a(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double s = std::sin(theta);
    for (int i = 0; i < n; ++i) a(i) = std::polar(scale, kPi * i * s);
    return a;
}

}  // namespace xfcsi
