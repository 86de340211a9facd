// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xfcsi/nn/tensor.hpp"

namespace xfcsi::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are matched to parameters by
// position, so the same parameter list must be passed on every step.
template <class T>
class Adam {
public:
    explicit Adam(ParamRefs<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->value().shape());
            v_.emplace_back(p->value().shape());
        }
    }

    void step(double lr) {
        if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Node<T>* node = params_[k]->var.node();
            if (!node->has_grad()) continue;  // unreachable this step; gradient is zero
            auto& value = params_[k]->value();
            const auto& grad = node->grad;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < value.numel(); ++i) {
                const double g = grad[i];
                const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                value[i] = static_cast<T>(value[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    long step_count() const { return step_count_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

private:
    ParamRefs<T> params_;
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    long step_count_ = 0;
};

}  // namespace xfcsi::nn
