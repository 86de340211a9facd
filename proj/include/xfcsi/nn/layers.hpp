// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "xfcsi/nn/ops.hpp"

namespace xfcsi::nn {

// Fan-in scaled uniform (He/leaky-rectifier gain); biases start at zero.
template <class T, class Rng>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double gain2 = 2.0 / (1.0 + kLeakySlope * kLeakySlope);
    const double bound = std::sqrt(3.0 * gain2 / static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

template <class T>
struct Linear {
    Parameter<T> weight, bias;

    Linear() = default;
    template <class Rng>
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(name + "/weight", fan_in_uniform<T>({out, in}, in, rng)), bias(name + "/bias", Tensor<T>({out})) {}

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight.var, bias.var); }
    void collect(ParamRefs<T>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <class T>
struct Conv2d {
    Parameter<T> weight, bias;
    int stride = 1;

    Conv2d() = default;
    template <class Rng>
    Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, int stride_, Rng& rng)
        : weight(name + "/weight", fan_in_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)),
          bias(name + "/bias", Tensor<T>({out})),
          stride(stride_) {
        if (stride != 1 && stride != 2) throw ConfigError("Conv2d: stride must be 1 or 2");
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight.var, bias.var, stride); }
    void collect(ParamRefs<T>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <class T>
struct Conv1d {
    Parameter<T> weight, bias;

    Conv1d() = default;
    template <class Rng>
    Conv1d(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(name + "/weight", fan_in_uniform<T>({out, in}, in, rng)), bias(name + "/bias", Tensor<T>({out})) {}

    Var<T> operator()(const Var<T>& x) const { return conv1d(x, weight.var, bias.var); }
    void collect(ParamRefs<T>& out) { out.push_back(&weight); out.push_back(&bias); }
};

// One multi-head self-attention block over a short token sequence, with
// learned Q/K/V/output projections and a residual connection. The attended
// tokens are concatenated into one vector per sample.
template <class T>
struct AttentionFuse {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;
    std::size_t dim = 0;

    AttentionFuse() = default;
    template <class Rng>
    AttentionFuse(const std::string& name, std::size_t d, std::size_t heads_, Rng& rng)
        : q(name + "/q", d, d, rng), k(name + "/k", d, d, rng), v(name + "/v", d, d, rng), o(name + "/o", d, d, rng),
          heads(heads_), dim(d) {
        if (heads == 0 || d % heads != 0) throw ConfigError("attention: feature dim must be divisible by heads");
    }

    // tokens: list of M feature batches, each [N, d] -> [N, M*d]
    Var<T> operator()(const std::vector<Var<T>>& tokens, Tensor<T>* weights = nullptr) const {
        if (tokens.empty()) throw ShapeError("attention: no tokens");
        const std::size_t n = tokens[0].dim(0);
        const std::size_t m = tokens.size();
        std::vector<Var<T>> parts;
        for (const auto& t : tokens) {
            if (t.value().rank() != 2 || t.dim(0) != n || t.dim(1) != dim) {
                throw ShapeError("attention: every token must be [N," + std::to_string(dim) + "], got " + shape_str(t.shape()));
            }
            parts.push_back(reshape(t, Shape{n, 1, dim}));
        }
        Var<T> seq = concat1(parts);                      // [N, M, d]
        Var<T> flat = reshape(seq, Shape{n * m, dim});    // tokens as rows
        auto proj = [&](const Linear<T>& l) { return reshape(l(flat), Shape{n, m, dim}); };
        Var<T> att = attention_core(proj(q), proj(k), proj(v), heads, weights);
        Var<T> mixed = o(reshape(att, Shape{n * m, dim}));
        return reshape(add(flat, mixed), Shape{n, m * dim});
    }

    void collect(ParamRefs<T>& out) { q.collect(out); k.collect(out); v.collect(out); o.collect(out); }
};

}  // namespace xfcsi::nn
