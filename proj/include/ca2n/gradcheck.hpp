// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient verification. Always runs at 64-bit precision;
// the op implementations themselves are templated, so checking the double
// instantiation validates the shared code path used by float training.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ca2n/tensor.hpp"

namespace ca2n {

struct GradCheckResult {
    std::string name;
    int instances = 0;
    std::size_t elements = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// One op under test: make_inputs draws fresh tensors (marking the ones whose
// gradients should be verified as trainable), fn rebuilds the scalar loss
// from the current input values.
struct GradCase {
    std::string name;
    std::function<std::vector<Tensor<double>>(Rng&)> make_inputs;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn;
};

namespace detail {

inline double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

}  // namespace detail

// Verifies d(fn)/d(p) for every element of every trainable tensor in `inputs`
// against central differences. `fraction` < 1 checks a random subset (at
// least one element per tensor).
inline GradCheckResult check_gradients(const std::string& name,
                                       std::vector<Tensor<double>>& inputs,
                                       const std::function<Tensor<double>(
                                           const std::vector<Tensor<double>>&)>& fn,
                                       Rng& rng, double fraction = 1.0, double h = 1e-5,
                                       double tol = 1e-4) {
    GradCheckResult res;
    res.name = name;
    res.instances = 1;
    res.pass = true;

    for (auto& t : inputs)
        if (t.trainable()) {
            t.node()->ensure_grad();
            std::fill(t.raw_grad().begin(), t.raw_grad().end(), 0.0);
        }
    Tensor<double> loss = fn(inputs);
    backward(loss);

    for (auto& t : inputs) {
        if (!t.trainable()) continue;
        std::vector<double> analytic = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (fraction < 1.0 && rng.uniform() > fraction) continue;
            double orig = t.raw_value()[i];
            t.raw_value()[i] = orig + h;
            double f1 = fn(inputs).item();
            t.raw_value()[i] = orig - h;
            double f2 = fn(inputs).item();
            t.raw_value()[i] = orig;
            double numeric = (f1 - f2) / (2.0 * h);
            double e = detail::rel_err(analytic[i], numeric);
            ++res.elements;
            if (e > res.max_rel_err) res.max_rel_err = e;
            if (e > tol) res.pass = false;
        }
    }
    return res;
}

struct GuardedResult : GradCheckResult {
    std::size_t skipped = 0;
};

// Deep stacks of piecewise-linear ops (relu, leaky-relu, clamp, abs, max-pool)
// leave central differences meaningless on coordinates whose stencil straddles
// a kink. This variant evaluates each coordinate at step h and h/2; the two
// estimates agree for smooth coordinates and diverge across a kink, so
// disagreeing coordinates are skipped. `min_kept` bounds how much may be
// skipped before the check itself fails.
inline GuardedResult check_gradients_guarded(const std::string& name,
                                             std::vector<Tensor<double>>& inputs,
                                             const std::function<Tensor<double>(
                                                 const std::vector<Tensor<double>>&)>& fn,
                                             Rng& rng, double fraction = 1.0, double h = 1e-5,
                                             double tol = 1e-4, double min_kept = 0.7) {
    GuardedResult res;
    res.name = name;
    res.instances = 1;
    res.pass = true;

    for (auto& t : inputs)
        if (t.trainable()) {
            t.node()->ensure_grad();
            std::fill(t.raw_grad().begin(), t.raw_grad().end(), 0.0);
        }
    backward(fn(inputs));

    for (auto& t : inputs) {
        if (!t.trainable()) continue;
        std::vector<double> analytic = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (fraction < 1.0 && rng.uniform() > fraction) continue;
            double orig = t.raw_value()[i];
            auto eval = [&](double v) {
                t.raw_value()[i] = v;
                return fn(inputs).item();
            };
            double fd_h = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            double fd_h2 = (eval(orig + h / 2) - eval(orig - h / 2)) / h;
            t.raw_value()[i] = orig;
            double denom = std::max({std::fabs(analytic[i]), std::fabs(fd_h), std::fabs(fd_h2), 1e-6});
            if (std::fabs(fd_h - fd_h2) > std::max(0.5 * tol * denom, 1e-9)) {
                ++res.skipped;
                continue;
            }
            double e = detail::rel_err(analytic[i], fd_h2);
            ++res.elements;
            if (e > res.max_rel_err) res.max_rel_err = e;
            if (e > tol) res.pass = false;
        }
    }
    const std::size_t sampled = res.elements + res.skipped;
    if (sampled == 0 || static_cast<double>(res.elements) < min_kept * static_cast<double>(sampled))
        res.pass = false;
    return res;
}

inline GradCheckResult run_case(const GradCase& c, int instances, std::uint64_t seed,
                                double h = 1e-5, double tol = 1e-4) {
    GradCheckResult total;
    total.name = c.name;
    total.pass = true;
    Rng rng(seed);
    for (int k = 0; k < instances; ++k) {
        auto inputs = c.make_inputs(rng);
        auto r = check_gradients(c.name, inputs, c.fn, rng, 1.0, h, tol);
        total.instances += 1;
        total.elements += r.elements;
        total.max_rel_err = std::max(total.max_rel_err, r.max_rel_err);
        total.pass = total.pass && r.pass;
    }
    return total;
}

namespace detail {

// Uniform values kept at least `margin` away from every kink listed in `avoid`
// so the finite-difference stencil never straddles a non-smooth point.
inline Tensor<double> smooth_uniform(Shape shape, Rng& rng, double lo, double hi,
                                     const std::vector<double>& avoid = {},
                                     double margin = 1e-3) {
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.raw_value()) {
        for (int tries = 0; tries < 64; ++tries) {
            v = rng.uniform(lo, hi);
            bool ok = true;
            for (double a : avoid)
                if (std::fabs(v - a) < margin) ok = false;
            if (ok) break;
        }
    }
    return t;
}

// True when the two largest values of each window differ by more than
// `margin` (keeps max selections stable under the stencil).
inline bool max_gap_ok(const std::vector<double>& vals, double margin) {
    double best = -1e300, second = -1e300;
    for (double v : vals) {
        if (v > best) {
            second = best;
            best = v;
        } else if (v > second) {
            second = v;
        }
    }
    return best - second > margin;
}

// Weighted sum with fixed random weights: distinct sensitivity per output
// element, so errors cannot cancel inside a plain sum.
inline Tensor<double> weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
    return reduce_sum(mul(y, w));
}

}  // namespace detail

// The standard per-op suite. Every differentiable engine op appears at least
// once; geometry variants cover strided/padded convolution paths.
std::vector<GradCase> standard_grad_cases();

}  // namespace ca2n
