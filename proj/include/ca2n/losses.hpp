// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ca2n/common.hpp"
#include "ca2n/tensor.hpp"

namespace ca2n {

// ---------------------------------------------------------------- weights

struct LossWeights {
    double content = 100.0;
    double adv = 1.0;
    double perc = 1.0;
    double induced = 1.0;
    double structural = 1.0;
};

inline void validate_weights(const LossWeights& w) {
    const double vals[] = {w.content, w.adv, w.perc, w.induced, w.structural};
    double sum = 0;
    for (double v : vals) {
        if (!(v >= 0)) throw ConfigError("loss weights must be non-negative");
        sum += v;
    }
    if (sum <= 0) throw ConfigError("at least one loss weight must be positive");
}

struct SsimConstants {
    // (0.01 L)^2 and (0.03 L)^2 at dynamic range L = 1
    double c1 = 1e-4;
    double c2 = 9e-4;
};

// Table II toggles and their effect on the pipeline.  The derived toggles are
// independent booleans so finer ablations than the four columns stay possible.
struct AblationFlags {
    bool cbam = true;
    bool da = true;
    bool gl = true;
    bool ie = true;
};

struct PipelineToggles {
    bool cbam = true;
    bool induced = true;
    bool perceptual = true;
    bool structural = true;
    bool enhance = true;
};

inline PipelineToggles ablation_flags_to_pipeline(const AblationFlags& f) {
    return PipelineToggles{f.cbam, f.da, f.gl, f.gl, f.ie};
}

// ------------------------------------------------------------------ terms

template <typename T>
Tensor<T> content_l1(const Tensor<T>& gen, const Tensor<T>& real) {
    if (gen.shape() != real.shape())
        throw InvalidInput(concat_msg("content_l1: shape mismatch ", shape_str(gen.shape()),
                                      " vs ", shape_str(real.shape())));
    return reduce_mean(abs(sub(gen, real)));
}

namespace detail {

template <typename T>
void validate_scores(const Tensor<T>& s, const char* which) {
    for (T v : s.value())
        if (!(v > T(0) && v < T(1)))
            throw InvalidInput(concat_msg("adversarial loss: ", which,
                                          " score outside (0,1): ", static_cast<double>(v)));
}

// log with a guard band so float scores arbitrarily close to 0/1 stay finite
template <typename T>
Tensor<T> safe_log(const Tensor<T>& s) {
    return log(clamp(s, T(1e-7), T(1) - T(1e-7)));
}

}  // namespace detail

template <typename T>
Tensor<T> adversarial_d(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
    detail::validate_scores(real_scores, "real");
    detail::validate_scores(fake_scores, "fake");
    auto one_minus_fake = add_scalar(mul_scalar(fake_scores, T(-1)), T(1));
    return add(mul_scalar(reduce_mean(detail::safe_log(real_scores)), T(-1)),
               mul_scalar(reduce_mean(detail::safe_log(one_minus_fake)), T(-1)));
}

template <typename T>
Tensor<T> adversarial_g(const Tensor<T>& fake_scores) {
    detail::validate_scores(fake_scores, "fake");
    return mul_scalar(reduce_mean(detail::safe_log(fake_scores)), T(-1));
}

// ------------------------------------------------------------- perceptual

// Fixed random convolutional feature stack: 4x (conv3x3 -> relu -> avgpool 2x2).
// Weights are seeded, never trainable; gradients still flow through the input.
template <typename T>
class FeatureExtractor {
public:
    FeatureExtractor(int in_channels, std::uint64_t seed) : in_channels_(in_channels) {
        if (in_channels <= 0) throw InvalidInput("feature extractor: in_channels must be positive");
        Rng rng(seed);
        static constexpr int kWidths[4] = {16, 32, 32, 32};
        int cin = in_channels;
        for (int w : kWidths) {
            auto k = randn<T>({w, cin, 3, 3}, rng);
            const T scale = static_cast<T>(std::sqrt(2.0 / (cin * 9)));
            for (T& v : k.raw_value()) v *= scale;
            kernels_.push_back(k);
            cin = w;
        }
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const auto& s = x.shape();
        if (s.size() != 4 || s[1] != in_channels_)
            throw InvalidInput(concat_msg("feature extractor: expected [N,", in_channels_,
                                          ",H,W], got ", shape_str(s)));
        if (s[2] < 16 || s[3] < 16)
            throw InvalidInput("feature extractor: spatial size must be at least 16x16");
        auto h = x;
        for (const auto& k : kernels_)
            h = pool(relu(conv2d(h, k, Tensor<T>(), 1, 1)), PoolKind::Avg, 2, 2);
        const auto& hs = h.shape();
        return reshape(h, {hs[0], hs[1] * hs[2] * hs[3]});
    }

private:
    int in_channels_;
    std::vector<Tensor<T>> kernels_;
};

template <typename T>
Tensor<T> perceptual(const Tensor<T>& gen, const Tensor<T>& real, const FeatureExtractor<T>& f) {
    if (gen.shape() != real.shape())
        throw InvalidInput(concat_msg("perceptual: shape mismatch ", shape_str(gen.shape()),
                                      " vs ", shape_str(real.shape())));
    auto d = sub(f(gen), f(real));
    return reduce_mean(sqrt(reduce_sum_rows(mul(d, d))));
}

// ---------------------------------------------------------------- induced

struct NoiseConfig {
    double epsilon = 0.05;
    std::uint64_t seed = 0;
};

// Strict bound for training configs; perturb/induced themselves accept
// epsilon = 0 so the no-noise identity holds.
inline void validate_noise(const NoiseConfig& cfg) {
    if (!(cfg.epsilon > 0 && cfg.epsilon <= 0.25))
        throw ConfigError(concat_msg("noise epsilon must lie in (0, 0.25], got ", cfg.epsilon));
}

// Owns the noise stream and remembers the last draw for reproducibility checks.
template <typename T>
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed) : rng_(seed) {}

    Tensor<T> draw(const Shape& shape) {
        last_ = rand_uniform<T>(shape, rng_, T(-1), T(1));
        return last_;
    }

    const Tensor<T>& last() const { return last_; }

private:
    Rng rng_;
    Tensor<T> last_;
};

template <typename T>
Tensor<T> perturb(const Tensor<T>& image, double epsilon, const Tensor<T>& noise) {
    if (image.shape() != noise.shape())
        throw InvalidInput(concat_msg("perturb: noise shape ", shape_str(noise.shape()),
                                      " does not match image ", shape_str(image.shape())));
    return clamp(add(image, mul_scalar(noise, static_cast<T>(epsilon))), T(0), T(1));
}

template <typename T>
Tensor<T> induced(const Tensor<T>& image, double epsilon, NoiseSource<T>& src) {
    auto noise = src.draw(image.shape());
    return reduce_mean(abs(sub(perturb(image, epsilon, noise), image)));
}

// ------------------------------------------------------------- structural

// Single-statistics SSIM: channel-wise global means/variances/covariance,
// averaged over channels and batch.  Built from autodiff ops so it can train.
template <typename T>
Tensor<T> ssim_global(const Tensor<T>& a, const Tensor<T>& b,
                      const SsimConstants& k = SsimConstants{}) {
    if (a.shape() != b.shape())
        throw InvalidInput(concat_msg("ssim_global: shape mismatch ", shape_str(a.shape()),
                                      " vs ", shape_str(b.shape())));
    if (a.shape().size() != 4)
        throw InvalidInput(concat_msg("ssim_global: expected [N,C,H,W], got ",
                                      shape_str(a.shape())));
    const T c1 = static_cast<T>(k.c1), c2 = static_cast<T>(k.c2);
    auto mu_a = mean_hw(a);
    auto mu_b = mean_hw(b);
    auto var_a = sub(mean_hw(mul(a, a)), mul(mu_a, mu_a));
    auto var_b = sub(mean_hw(mul(b, b)), mul(mu_b, mu_b));
    auto cov = sub(mean_hw(mul(a, b)), mul(mu_a, mu_b));
    auto num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), T(2)), c1),
                   add_scalar(mul_scalar(cov, T(2)), c2));
    auto den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                   add_scalar(add(var_a, var_b), c2));
    return reduce_mean(div(num, den));
}

template <typename T>
Tensor<T> structural_loss(const Tensor<T>& real, const Tensor<T>& gen,
                          const SsimConstants& k = SsimConstants{}) {
    return add_scalar(mul_scalar(ssim_global(real, gen, k), T(-1)), T(1));
}

// ---------------------------------------------------------------- objective

template <typename T>
struct LossTerms {
    Tensor<T> content;
    Tensor<T> adversarial;
    Tensor<T> perceptual;
    Tensor<T> induced;
    Tensor<T> structural;
};

struct TermBreakdown {
    std::string name;
    double raw = 0;
    double weighted = 0;
};

template <typename T>
struct Objective {
    Tensor<T> total;
    std::vector<TermBreakdown> terms;
};

// Weighted sum over the enabled terms.  Disabled terms are absent from the
// breakdown (not zero); an enabled term must be supplied and finite.
template <typename T>
Objective<T> global_objective(const LossTerms<T>& terms, const LossWeights& w,
                              const PipelineToggles& toggles) {
    validate_weights(w);
    struct Slot {
        const char* name;
        const Tensor<T>* term;
        double weight;
        bool enabled;
    };
    const Slot slots[] = {
        {"content", &terms.content, w.content, true},
        {"adversarial", &terms.adversarial, w.adv, true},
        {"perceptual", &terms.perceptual, w.perc, toggles.perceptual},
        {"induced", &terms.induced, w.induced, toggles.induced},
        {"structural", &terms.structural, w.structural, toggles.structural},
    };
    Objective<T> out;
    for (const Slot& s : slots) {
        if (!s.enabled) continue;
        if (!s.term->defined())
            throw InvalidInput(concat_msg("global_objective: term '", s.name,
                                          "' is enabled but was not supplied"));
        if (s.term->numel() != 1)
            throw InvalidInput(concat_msg("global_objective: term '", s.name, "' is not scalar"));
        const double raw = static_cast<double>(s.term->item());
        if (!std::isfinite(raw))
            throw TrainingDiverged(concat_msg("loss term '", s.name, "' is not finite: ", raw));
        auto weighted = mul_scalar(*s.term, static_cast<T>(s.weight));
        out.total = out.total.defined() ? add(out.total, weighted) : weighted;
        out.terms.push_back({s.name, raw, s.weight * raw});
    }
    if (!out.total.defined()) throw InvalidInput("global_objective: no terms enabled");
    if (!std::isfinite(static_cast<double>(out.total.item())))
        throw TrainingDiverged("global objective is not finite");
    return out;
}

}  // namespace ca2n
