// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "ca2n/tensor.hpp"

namespace ca2n {

// Adam (default) or plain SGD over a fixed parameter list. All parameters
// must be trainable leaves; moment buffers live here, not on the tensors.
//
// weight_decay is decoupled (AdamW style) and applied only to tensors of rank
// >= 2; biases are left alone. Saturated sigmoid pixels recover through the
// decay pull once their pre-activations shrink back into the representable
// gradient range.
template <typename T>
class Optimizer {
public:
    enum class Kind { Adam, Sgd };

    Optimizer(std::vector<Tensor<T>> params, Kind kind = Kind::Adam, double lr = 2e-4,
              double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
              double eps = 1e-8)
        : params_(std::move(params)), kind_(kind), lr_(lr), wd_(weight_decay), b1_(beta1),
          b2_(beta2), eps_(eps) {
        for (auto& p : params_) {
            if (!p.trainable())
                throw InvalidInput("optimizer: parameter is not marked trainable");
            p.node()->ensure_grad();
        }
        if (kind_ == Kind::Adam) {
            m_.resize(params_.size());
            v_.resize(params_.size());
            for (std::size_t i = 0; i < params_.size(); ++i) {
                m_[i].assign(params_[i].numel(), T(0));
                v_[i].assign(params_[i].numel(), T(0));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.node()->ensure_grad();
            std::fill(p.raw_grad().begin(), p.raw_grad().end(), T(0));
        }
    }

    void step() {
        ++t_;
        if (kind_ == Kind::Sgd) {
            for (auto& p : params_) {
                const auto& g = p.grad();
                auto& w = p.raw_value();
                for (std::size_t i = 0; i < w.size(); ++i)
                    w[i] -= static_cast<T>(lr_) * g[i];
            }
            decay();
            return;
        }
        const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1_, t_)));
        const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2_, t_)));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            const auto& g = params_[k].grad();
            auto& w = params_[k].raw_value();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = static_cast<T>(b1_) * m[i] + static_cast<T>(1.0 - b1_) * g[i];
                v[i] = static_cast<T>(b2_) * v[i] + static_cast<T>(1.0 - b2_) * g[i] * g[i];
                w[i] -= static_cast<T>(lr_) * (m[i] * c1) /
                        (std::sqrt(v[i] * c2) + static_cast<T>(eps_));
            }
        }
        decay();
    }

    const std::vector<Tensor<T>>& params() const { return params_; }
    long step_count() const { return t_; }

    // For schedules; moment buffers and the step count are unaffected.
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    void decay() {
        if (wd_ == 0.0) return;
        const T f = static_cast<T>(1.0 - lr_ * wd_);
        for (auto& p : params_) {
            if (p.rank() < 2) continue;
            for (T& w : p.raw_value()) w *= f;
        }
    }

    std::vector<Tensor<T>> params_;
    Kind kind_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace ca2n
