// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xfcsi/nn/tensor.hpp"

namespace xfcsi::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <class T>
void accumulate(Node<T>& target, const Tensor<T>& g) {
    if (!target.requires_grad) return;
    auto& dst = target.ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

// Leading dimension as batch, everything else flattened.
inline std::size_t trailing(const Shape& s, std::size_t from) {
    std::size_t n = 1;
    for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        detail::accumulate(*self.inputs[1], self.grad);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c;
    return record<T>(std::move(out), {a}, [c](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * c;
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
    return record<T>(std::move(out), {a}, [](Node<T>& self) { detail::accumulate(*self.inputs[0], self.grad); });
}

// a * s where s holds a single value.
template <class T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
    detail::require(s.numel() == 1, "mul_scalar: scalar operand must have one element");
    const T sv = s.value()[0];
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * sv;
    return record<T>(std::move(out), {a, s}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const T sv = self.inputs[1]->value[0];
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * sv;
        }
        if (self.inputs[1]->requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < av.numel(); ++i) acc += self.grad[i] * av[i];
            self.inputs[1]->ensure_grad()[0] += acc;
        }
    });
}

// x [N, ...] scaled per sample by r [N].
template <class T>
Var<T> mul_rows(const Var<T>& x, const Var<T>& r) {
    detail::require(x.value().rank() >= 1 && r.numel() == x.dim(0), "mul_rows: need one factor per sample");
    const std::size_t n = x.dim(0);
    const std::size_t inner = x.numel() / std::max<std::size_t>(n, 1);
    Tensor<T> out(x.shape());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) out[s * inner + i] = x.value()[s * inner + i] * r.value()[s];
    return record<T>(std::move(out), {x, r}, [n, inner](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& rv = self.inputs[1]->value;
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->ensure_grad();
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < inner; ++i) g[s * inner + i] += self.grad[s * inner + i] * rv[s];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->ensure_grad();
            for (std::size_t s = 0; s < n; ++s) {
                T acc = 0;
                for (std::size_t i = 0; i < inner; ++i) acc += self.grad[s * inner + i] * xv[s * inner + i];
                g[s] += acc;
            }
        }
    });
}

// x [N, C, ...] + b [N, C] broadcast over the trailing dims.
template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
    detail::require(x.value().rank() >= 2 && b.value().rank() == 2 && b.dim(0) == x.dim(0) && b.dim(1) == x.dim(1),
                    "add_channel_bias: expected x [N,C,...] and b [N,C], got " + shape_str(x.shape()) + " and " +
                        shape_str(b.shape()));
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t inner = detail::trailing(x.shape(), 2);
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < nc; ++c)
        for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] = x.value()[c * inner + i] + b.value()[c];
    return record<T>(std::move(out), {x, b}, [nc, inner](Node<T>& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->ensure_grad();
            for (std::size_t c = 0; c < nc; ++c) {
                T acc = 0;
                for (std::size_t i = 0; i < inner; ++i) acc += self.grad[c * inner + i];
                g[c] += acc;
            }
        }
    });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.value()[i]);
    return record<T>(out, {a}, [out](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * out[i];
    });
}

template <class T>
Var<T> log(const Var<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.value()[i]);
    return record<T>(std::move(out), {a}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / av[i];
    });
}

template <class T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * a.value()[i];
    return record<T>(std::move(out), {a}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * T(2) * av[i];
    });
}

inline constexpr double kLeakySlope = 0.01;

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(kLeakySlope)) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const T v = a.value()[i];
        out[i] = v > T(0) ? v : slope * v;
    }
    return record<T>(std::move(out), {a}, [slope](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (av[i] > T(0) ? T(1) : slope);
    });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Var<T> sum(const Var<T>& a) {
    T acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.value()[i];
    return record<T>(Tensor<T>({1}, {acc}), {a}, [](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const T gs = self.grad[0];
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gs;
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(std::max<std::size_t>(a.numel(), 1)));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
    Tensor<T> out = a.value().reshaped(std::move(s));
    return record<T>(std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

// Concatenate along axis 1: parts [N, C_i, rest...] -> [N, sum C_i, rest...].
template <class T>
Var<T> concat1(const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat1: no inputs");
    const Shape& s0 = parts[0].shape();
    detail::require(s0.size() >= 2, "concat1: inputs need rank >= 2");
    const std::size_t n = s0[0];
    const std::size_t inner = detail::trailing(s0, 2);
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        detail::require(s.size() == s0.size() && s[0] == n && detail::trailing(s, 2) == inner,
                        "concat1: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
        total_c += s[1];
    }
    Shape out_shape = s0;
    out_shape[1] = total_c;
    Tensor<T> out(out_shape);
    std::vector<std::size_t> channels;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        channels.push_back(c);
        for (std::size_t s = 0; s < n; ++s)
            std::copy_n(p.value().data() + s * c * inner, c * inner, out.data() + (s * total_c + offset) * inner);
        offset += c;
    }
    return record<T>(std::move(out), parts, [n, inner, total_c, channels](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < channels.size(); ++k) {
            const std::size_t c = channels[k];
            if (self.inputs[k]->requires_grad) {
                auto& g = self.inputs[k]->ensure_grad();
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t i = 0; i < c * inner; ++i)
                        g[s * c * inner + i] += self.grad[(s * total_c + off) * inner + i];
            }
            off += c;
        }
    });
}

// ---------------------------------------------------------------------------
// Layers

// y = W x + b. x is [in] or [N, in]; W [out, in]; b [out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const bool single = x.value().rank() == 1;
    detail::require(w.value().rank() == 2 && b.value().rank() == 1 && b.dim(0) == w.dim(0),
                    "linear: weight must be [out,in] and bias [out]");
    const std::size_t in = w.dim(1), outd = w.dim(0);
    const std::size_t n = single ? 1 : x.dim(0);
    detail::require((single && x.dim(0) == in) || (!single && x.value().rank() == 2 && x.dim(1) == in),
                    "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    Tensor<T> out(single ? Shape{outd} : Shape{n, outd});
    {
        detail::ConstMatMap<T> X(x.value().data(), n, in);
        detail::ConstMatMap<T> W(w.value().data(), outd, in);
        detail::MatMap<T> Y(out.data(), n, outd);
        Y.noalias() = X * W.transpose();
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t o = 0; o < outd; ++o) out[s * outd + o] += b.value()[o];
    }
    return record<T>(std::move(out), {x, w, b}, [n, in, outd](Node<T>& self) {
        detail::ConstMatMap<T> dY(self.grad.data(), n, outd);
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        if (xn.requires_grad) {
            detail::MatMap<T> dX(xn.ensure_grad().data(), n, in);
            detail::ConstMatMap<T> W(wn.value.data(), outd, in);
            dX.noalias() += dY * W;
        }
        if (wn.requires_grad) {
            detail::MatMap<T> dW(wn.ensure_grad().data(), outd, in);
            detail::ConstMatMap<T> X(xn.value.data(), n, in);
            dW.noalias() += dY.transpose() * X;
        }
        if (bn.requires_grad) {
            auto& g = bn.ensure_grad();
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < outd; ++o) g[o] += self.grad[s * outd + o];
        }
    });
}

// 2-D cross-correlation with zero "same" padding (k/2) and stride 1 or 2.
// x [N, Ci, H, W] (or [Ci, H, W]); w [Co, Ci, k, k]; b [Co].
template <class T>
Var<T> conv2d(const Var<T>& x_in, const Var<T>& w, const Var<T>& b, int stride) {
    if (stride != 1 && stride != 2) throw ConfigError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    const bool single = x_in.value().rank() == 3;
    Var<T> x = single ? reshape(x_in, Shape{1, x_in.dim(0), x_in.dim(1), x_in.dim(2)}) : x_in;
    detail::require(x.value().rank() == 4, "conv2d: input must be [N,C,H,W]");
    detail::require(w.value().rank() == 4 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
                    "conv2d: kernel must be [Co,Ci,k,k] with odd k");
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t co = w.dim(0), k = w.dim(2);
    detail::require(w.dim(1) == ci, "conv2d: channel mismatch, input " + shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
    detail::require(b.value().rank() == 1 && b.dim(0) == co, "conv2d: bias must be [Co]");
    const long pad = static_cast<long>(k / 2);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
    const std::size_t rows = ci * k * k;
    const std::size_t cols = n * ho * wo;
    const std::size_t hw_out = ho * wo;

    // im2col: cols laid out [rows, N*Ho*Wo]
    auto im2col = std::make_shared<Buffer<T>>(rows * cols, T(0));
    const T* xv = x.value().data();
    for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = im2col->data() + ((c * k + ky) * k + kx) * cols;
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                            row[s * hw_out + oy * wo + ox] = xv[((s * ci + c) * h + iy) * wd + ix];
                        }
                    }
            }

    detail::RowMat<T> ym(co, cols);
    {
        detail::ConstMatMap<T> W(w.value().data(), co, rows);
        detail::ConstMatMap<T> C(im2col->data(), rows, cols);
        ym.noalias() = W * C;
    }
    Tensor<T> out({n, co, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < co; ++o) {
            const T bias = b.value()[o];
            const T* src = ym.data() + o * cols + s * hw_out;
            T* dst = out.data() + (s * co + o) * hw_out;
            for (std::size_t i = 0; i < hw_out; ++i) dst[i] = src[i] + bias;
        }

    Var<T> y = record<T>(std::move(out), {x, w, b},
        [=](Node<T>& self) {
            detail::RowMat<T> dym(co, cols);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < co; ++o)
                    std::copy_n(self.grad.data() + (s * co + o) * hw_out, hw_out, dym.data() + o * cols + s * hw_out);
            auto& xn = *self.inputs[0];
            auto& wn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            if (wn.requires_grad) {
                detail::MatMap<T> dW(wn.ensure_grad().data(), co, rows);
                detail::ConstMatMap<T> C(im2col->data(), rows, cols);
                dW.noalias() += dym * C.transpose();
            }
            if (bn.requires_grad) {
                auto& g = bn.ensure_grad();
                for (std::size_t o = 0; o < co; ++o) g[o] += dym.row(o).sum();
            }
            if (xn.requires_grad) {
                detail::ConstMatMap<T> W(wn.value.data(), co, rows);
                detail::RowMat<T> dcols = W.transpose() * dym;
                auto& gx = xn.ensure_grad();
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const T* row = dcols.data() + ((c * k + ky) * k + kx) * cols;
                            for (std::size_t s = 0; s < n; ++s)
                                for (std::size_t oy = 0; oy < ho; ++oy) {
                                    const long iy = static_cast<long>(oy * stride + ky) - pad;
                                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                    for (std::size_t ox = 0; ox < wo; ++ox) {
                                        const long ix = static_cast<long>(ox * stride + kx) - pad;
                                        if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                        gx[((s * ci + c) * h + iy) * wd + ix] += row[s * hw_out + oy * wo + ox];
                                    }
                                }
                        }
            }
        });
    return single ? reshape(y, Shape{co, ho, wo}) : y;
}

// Kernel-size-1 convolution over points: x [N, Ci, U] (or [Ci, U]), w [Co, Ci].
template <class T>
Var<T> conv1d(const Var<T>& x_in, const Var<T>& w, const Var<T>& b) {
    const bool single = x_in.value().rank() == 2;
    Var<T> x = single ? reshape(x_in, Shape{1, x_in.dim(0), x_in.dim(1)}) : x_in;
    detail::require(x.value().rank() == 3, "conv1d: input must be [N,C,U]");
    detail::require(w.value().rank() == 2 && w.dim(1) == x.dim(1), "conv1d: weight " + shape_str(w.shape()) +
                                                                         " does not match input " + shape_str(x.shape()));
    detail::require(b.value().rank() == 1 && b.dim(0) == w.dim(0), "conv1d: bias must be [Co]");
    const std::size_t n = x.dim(0), ci = x.dim(1), u = x.dim(2), co = w.dim(0);
    Tensor<T> out({n, co, u});
    detail::ConstMatMap<T> W(w.value().data(), co, ci);
    for (std::size_t s = 0; s < n; ++s) {
        detail::ConstMatMap<T> X(x.value().data() + s * ci * u, ci, u);
        detail::MatMap<T> Y(out.data() + s * co * u, co, u);
        Y.noalias() = W * X;
        for (std::size_t o = 0; o < co; ++o) Y.row(o).array() += b.value()[o];
    }
    Var<T> y = record<T>(std::move(out), {x, w, b}, [n, ci, u, co](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        detail::ConstMatMap<T> W(wn.value.data(), co, ci);
        for (std::size_t s = 0; s < n; ++s) {
            detail::ConstMatMap<T> dY(self.grad.data() + s * co * u, co, u);
            if (xn.requires_grad) {
                detail::MatMap<T> dX(xn.ensure_grad().data() + s * ci * u, ci, u);
                dX.noalias() += W.transpose() * dY;
            }
            if (wn.requires_grad) {
                detail::MatMap<T> dW(wn.ensure_grad().data(), co, ci);
                detail::ConstMatMap<T> X(xn.value.data() + s * ci * u, ci, u);
                dW.noalias() += dY * X.transpose();
            }
            if (bn.requires_grad) {
                auto& g = bn.ensure_grad();
                for (std::size_t o = 0; o < co; ++o) g[o] += dY.row(o).sum();
            }
        }
    });
    return single ? reshape(y, Shape{co, u}) : y;
}

// Max over the point axis: [N, C, U] -> [N, C] (or [C, U] -> [C]).
// Gradient goes to the first maximal index.
template <class T>
Var<T> global_maxpool(const Var<T>& x) {
    const bool single = x.value().rank() == 2;
    detail::require(single || x.value().rank() == 3, "global_maxpool: input must be [N,C,U] or [C,U]");
    const std::size_t u = x.shape().back();
    if (u == 0) throw ShapeError("global_maxpool: empty point set");
    const std::size_t rows = x.numel() / u;
    Tensor<T> out(single ? Shape{x.dim(0)} : Shape{x.dim(0), x.dim(1)});
    std::vector<std::size_t> argmax(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = x.value().data() + r * u;
        std::size_t best = 0;
        for (std::size_t i = 1; i < u; ++i)
            if (p[i] > p[best]) best = i;
        argmax[r] = best;
        out[r] = p[best];
    }
    return record<T>(std::move(out), {x}, [argmax, u](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < argmax.size(); ++r) g[r * u + argmax[r]] += self.grad[r];
    });
}

// Nearest-neighbour 2x upsampling: [N, C, H, W] -> [N, C, 2H, 2W].
template <class T>
Var<T> upsample2x(const Var<T>& x) {
    detail::require(x.value().rank() == 4, "upsample2x: input must be [N,C,H,W]");
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out({x.dim(0), x.dim(1), 2 * h, 2 * w});
    for (std::size_t c = 0; c < nc; ++c)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(c * 2 * h + y) * 2 * w + xx] = x.value()[(c * h + y / 2) * w + xx / 2];
    return record<T>(std::move(out), {x}, [nc, h, w](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t c = 0; c < nc; ++c)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    g[(c * h + y / 2) * w + xx / 2] += self.grad[(c * 2 * h + y) * 2 * w + xx];
    });
}

// Scaled dot-product attention core over tokens. q, k, v: [N, M, d].
// Each head attends over the M tokens with its own d/heads slice.
// When `weights` is given it receives the softmax matrices [N, heads, M, M].
template <class T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                      Tensor<T>* weights = nullptr) {
    detail::require(q.value().rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
                    "attention_core: q, k, v must share shape [N,M,d]");
    const std::size_t n = q.dim(0), m = q.dim(1), d = q.dim(2);
    if (heads == 0 || d % heads != 0) throw ConfigError("attention: feature dim must be divisible by heads");
    const std::size_t dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> probs({n, heads, m, m});
    Tensor<T> out({n, m, d});
    const T* Q = q.value().data();
    const T* K = k.value().data();
    const T* V = v.value().data();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t hh = 0; hh < heads; ++hh) {
            T* P = probs.data() + ((s * heads + hh) * m) * m;
            for (std::size_t i = 0; i < m; ++i) {
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < m; ++j) {
                    T acc = 0;
                    for (std::size_t e = 0; e < dh; ++e)
                        acc += Q[(s * m + i) * d + hh * dh + e] * K[(s * m + j) * d + hh * dh + e];
                    P[i * m + j] = acc * inv_sqrt;
                    mx = std::max(mx, P[i * m + j]);
                }
                T z = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    P[i * m + j] = std::exp(P[i * m + j] - mx);
                    z += P[i * m + j];
                }
                for (std::size_t j = 0; j < m; ++j) P[i * m + j] /= z;
                for (std::size_t e = 0; e < dh; ++e) {
                    T acc = 0;
                    for (std::size_t j = 0; j < m; ++j) acc += P[i * m + j] * V[(s * m + j) * d + hh * dh + e];
                    out[(s * m + i) * d + hh * dh + e] = acc;
                }
            }
        }
    if (weights) *weights = probs;
    return record<T>(std::move(out), {q, k, v}, [=](Node<T>& self) {
        const T* Qv = self.inputs[0]->value.data();
        const T* Kv = self.inputs[1]->value.data();
        const T* Vv = self.inputs[2]->value.data();
        Tensor<T> dq({n, m, d}), dk({n, m, d}), dv({n, m, d});
        std::vector<T> dp(m * m), ds(m * m);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t hh = 0; hh < heads; ++hh) {
                const T* P = probs.data() + ((s * heads + hh) * m) * m;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        T acc = 0;
                        for (std::size_t e = 0; e < dh; ++e) {
                            const T go = self.grad[(s * m + i) * d + hh * dh + e];
                            acc += go * Vv[(s * m + j) * d + hh * dh + e];
                            dv[(s * m + j) * d + hh * dh + e] += P[i * m + j] * go;
                        }
                        dp[i * m + j] = acc;
                    }
                for (std::size_t i = 0; i < m; ++i) {
                    T dot = 0;
                    for (std::size_t j = 0; j < m; ++j) dot += dp[i * m + j] * P[i * m + j];
                    for (std::size_t j = 0; j < m; ++j) ds[i * m + j] = P[i * m + j] * (dp[i * m + j] - dot) * inv_sqrt;
                }
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t e = 0; e < dh; ++e) {
                            dq[(s * m + i) * d + hh * dh + e] += ds[i * m + j] * Kv[(s * m + j) * d + hh * dh + e];
                            dk[(s * m + j) * d + hh * dh + e] += ds[i * m + j] * Qv[(s * m + i) * d + hh * dh + e];
                        }
            }
        detail::accumulate(*self.inputs[0], dq);
        detail::accumulate(*self.inputs[1], dk);
        detail::accumulate(*self.inputs[2], dv);
    });
}

// ---------------------------------------------------------------------------
// Similarity / contrastive helpers

// Row-wise L2 normalisation of x [N, D].
template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
    detail::require(x.value().rank() == 2, "l2_normalize_rows: input must be [N,D]");
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out(x.shape());
    std::vector<T> norms(n);
    for (std::size_t s = 0; s < n; ++s) {
        T acc = 0;
        for (std::size_t i = 0; i < d; ++i) acc += x.value()[s * d + i] * x.value()[s * d + i];
        norms[s] = std::max(std::sqrt(acc), eps);
        for (std::size_t i = 0; i < d; ++i) out[s * d + i] = x.value()[s * d + i] / norms[s];
    }
    return record<T>(out, {x}, [out, norms, n, d](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t s = 0; s < n; ++s) {
            T dot = 0;
            for (std::size_t i = 0; i < d; ++i) dot += self.grad[s * d + i] * out[s * d + i];
            for (std::size_t i = 0; i < d; ++i)
                g[s * d + i] += (self.grad[s * d + i] - out[s * d + i] * dot) / norms[s];
        }
    });
}

// a [N, D] times b [M, D] transposed -> [N, M].
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    detail::require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1), "matmul_nt: shape mismatch");
    const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
    Tensor<T> out({n, m});
    detail::ConstMatMap<T> A(a.value().data(), n, d);
    detail::ConstMatMap<T> B(b.value().data(), m, d);
    detail::MatMap<T>(out.data(), n, m).noalias() = A * B.transpose();
    return record<T>(std::move(out), {a, b}, [n, m, d](Node<T>& self) {
        detail::ConstMatMap<T> dO(self.grad.data(), n, m);
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (an.requires_grad) {
            detail::MatMap<T>(an.ensure_grad().data(), n, d).noalias() += dO * detail::ConstMatMap<T>(bn.value.data(), m, d);
        }
        if (bn.requires_grad) {
            detail::MatMap<T>(bn.ensure_grad().data(), m, d).noalias() +=
                dO.transpose() * detail::ConstMatMap<T>(an.value.data(), n, d);
        }
    });
}

// Mean over rows of -log softmax(logits_row)[row]; logits [N, N], matching
// pairs on the diagonal.
template <class T>
Var<T> softmax_xent_diag(const Var<T>& logits) {
    detail::require(logits.value().rank() == 2 && logits.dim(0) == logits.dim(1), "softmax_xent_diag: logits must be square");
    const std::size_t n = logits.dim(0);
    Tensor<T> probs({n, n});
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.value().data() + i * n;
        T mx = *std::max_element(row, row + n);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - mx) / z;
        loss += (mx + std::log(z)) - row[i];
    }
    loss /= static_cast<T>(n);
    return record<T>(Tensor<T>({1}, {loss}), {logits}, [probs, n](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const T gs = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gs * (probs[i * n + j] - (i == j ? T(1) : T(0)));
    });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers

// out[2i] = sin(s / 10000^(2i/D)), out[2i+1] = cos(s / 10000^(2i/D)).
template <class T>
Tensor<T> sinusoidal_embed(double s, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("sinusoidal_embed: dimension must be even and positive");
    Tensor<T> out({dim});
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out[2 * i] = static_cast<T>(std::sin(s * freq));
        out[2 * i + 1] = static_cast<T>(std::cos(s * freq));
    }
    return out;
}

}  // namespace xfcsi::nn
