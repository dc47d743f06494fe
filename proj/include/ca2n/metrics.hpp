// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ca2n/common.hpp"
#include "ca2n/losses.hpp"
#include "ca2n/tensor.hpp"

namespace ca2n {

// -------------------------------------------------------------- windowed ssim

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const double c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    return w;
}

// One separable Gaussian pass over a [H,W] plane given as doubles (valid region).
inline std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                        const std::vector<double>& win) {
    const int k = static_cast<int>(win.size());
    const int ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += win[i] * plane[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += win[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace detail

// Mean over valid-region Gaussian windows of the local-statistics similarity
// ratio, averaged over channels (and batch for rank-4 input).
template <typename T>
double ssim_windowed(const Tensor<T>& a, const Tensor<T>& b, int window = 11,
                     double sigma = 1.5, const SsimConstants& k = SsimConstants{}) {
    if (a.shape() != b.shape())
        throw InvalidInput(concat_msg("ssim_windowed: shape mismatch ", shape_str(a.shape()),
                                      " vs ", shape_str(b.shape())));
    if (a.shape().size() != 4)
        throw InvalidInput(concat_msg("ssim_windowed: expected [N,C,H,W], got ",
                                      shape_str(a.shape())));
    const int n = a.shape()[0], c = a.shape()[1], h = a.shape()[2], w = a.shape()[3];
    if (h < window || w < window)
        throw InvalidInput(concat_msg("ssim_windowed: image ", h, "x", w,
                                      " smaller than the ", window, "x", window, " window"));
    auto win = detail::gaussian_window(window, sigma);
    double norm = 0;
    for (double v : win) norm += v;
    norm *= norm;  // separable passes apply the 1-D kernel twice

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> xa(plane), xb(plane), xaa(plane), xbb(plane), xab(plane);
    double total = 0;
    std::size_t windows = 0;
    for (int img = 0; img < n * c; ++img) {
        const T* pa = a.value().data() + img * plane;
        const T* pb = b.value().data() + img * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xa[i] = pa[i];
            xb[i] = pb[i];
            xaa[i] = xa[i] * xa[i];
            xbb[i] = xb[i] * xb[i];
            xab[i] = xa[i] * xb[i];
        }
        auto ma = detail::filter_valid(xa, h, w, win);
        auto mb = detail::filter_valid(xb, h, w, win);
        auto maa = detail::filter_valid(xaa, h, w, win);
        auto mbb = detail::filter_valid(xbb, h, w, win);
        auto mab = detail::filter_valid(xab, h, w, win);
        for (std::size_t i = 0; i < ma.size(); ++i) {
            const double mua = ma[i] / norm, mub = mb[i] / norm;
            const double va = maa[i] / norm - mua * mua;
            const double vb = mbb[i] / norm - mub * mub;
            const double cov = mab[i] / norm - mua * mub;
            total += ((2 * mua * mub + k.c1) * (2 * cov + k.c2)) /
                     ((mua * mua + mub * mub + k.c1) * (va + vb + k.c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

// ------------------------------------------------------------------------ psnr

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw InvalidInput(concat_msg("psnr: shape mismatch ", shape_str(a.shape()), " vs ",
                                      shape_str(b.shape())));
    double mse = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// "inf" sentinel for identical-image PSNR in reports
std::string fmt_metric(double v);

// --------------------------------------------------------------- frechet proxy

// Gaussian Fréchet distance between two feature clouds (population
// covariances; matrix square root via eigendecomposition of the symmetrized
// product). Feature rows are accumulated in a canonical sorted order so the
// result is independent of image ordering within each set. NOT comparable to
// classifier-based FID.
double frechet_from_features(const std::vector<std::vector<double>>& fa,
                             const std::vector<std::vector<double>>& fb, bool& regularized);

template <typename T>
double frechet_proxy(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b,
                     const FeatureExtractor<T>& f, bool& regularized) {
    if (a.size() < 2 || b.size() < 2)
        throw InvalidInput("frechet_proxy: each image set needs at least 2 images");
    auto rows = [&f](const std::vector<Tensor<T>>& set) {
        std::vector<std::vector<double>> out;
        for (const auto& img : set) {
            auto feat = f(img);
            out.emplace_back(feat.value().begin(), feat.value().end());
        }
        return out;
    };
    return frechet_from_features(rows(a), rows(b), regularized);
}

// ------------------------------------------------------------------ evaluation

struct EvalSample {
    std::string id;
    Tensor<float> reference;  // ground-truth photo
    Tensor<float> pre_hook;   // raw generator output
    Tensor<float> post_hook;  // after the enhancement hook
};

struct EvalRow {
    std::string id;
    double ssim_pre = 0, psnr_pre = 0;
    double ssim_post = 0, psnr_post = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_ssim_pre = 0, mean_psnr_pre = 0;
    double mean_ssim_post = 0, mean_psnr_post = 0;
    bool has_frechet = false;
    double frechet = 0;
    bool frechet_regularized = false;
    std::size_t count = 0;
    std::string config_echo;
};

struct EvalOptions {
    bool with_frechet = true;
    std::uint64_t feature_seed = 2024;
    std::string config_echo;
};

EvalReport evaluate_samples(const std::vector<EvalSample>& samples, const EvalOptions& opts);
void write_report_csv(const EvalReport& report, const std::string& path);

// ------------------------------------------------------------------ threading

// Worker cap from CA2N_THREADS (default 1). Results are written into
// per-index slots, so the outcome is deterministic for any thread count.
int worker_threads();
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ca2n
