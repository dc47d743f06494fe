// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#include "ca2n/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace ca2n {

std::string fmt_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

namespace {

// Indices that visit rows in lexicographic order: the accumulation below is
// then bitwise independent of how the caller ordered the images.
std::vector<std::size_t> canonical_order(const std::vector<std::vector<double>>& rows) {
    std::vector<std::size_t> idx(rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&rows](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
    return idx;
}

void moments(const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mu,
             Eigen::MatrixXd& cov) {
    const auto idx = canonical_order(rows);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(rows[0].size());
    mu = Eigen::VectorXd::Zero(d);
    for (std::size_t i : idx) mu += Eigen::Map<const Eigen::VectorXd>(rows[i].data(), d);
    mu /= static_cast<double>(n);
    cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i : idx) {
        Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(rows[i].data(), d) - mu;
        cov.noalias() += c * c.transpose();
    }
    cov /= static_cast<double>(n);  // population covariance
}

}  // namespace

double frechet_from_features(const std::vector<std::vector<double>>& fa,
                             const std::vector<std::vector<double>>& fb, bool& regularized) {
    if (fa.size() < 2 || fb.size() < 2)
        throw InvalidInput("frechet_from_features: each set needs at least 2 feature rows");
    const std::size_t d = fa[0].size();
    for (const auto& r : fa)
        if (r.size() != d) throw InvalidInput("frechet_from_features: ragged feature rows");
    for (const auto& r : fb)
        if (r.size() != d) throw InvalidInput("frechet_from_features: feature width mismatch");

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd ca, cb;
    moments(fa, mu_a, ca);
    moments(fb, mu_b, cb);

    regularized = false;
    auto regularize_if_degenerate = [&regularized](Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < 1e-10) {
            m.diagonal().array() += 1e-6;
            regularized = true;
        }
    };
    regularize_if_degenerate(ca);
    regularize_if_degenerate(cb);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
    Eigen::MatrixXd sqrt_a = ea.eigenvectors() *
                             ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                             ea.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(sqrt_a * cb * sqrt_a);
    const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double dist = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    return std::max(dist, 0.0);
}

int worker_threads() {
    const char* env = std::getenv("CA2N_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return std::clamp(n, 1, 64);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<std::size_t>(worker_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&fn, n, t, workers] {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    for (auto& th : pool) th.join();
}

EvalReport evaluate_samples(const std::vector<EvalSample>& samples, const EvalOptions& opts) {
    if (samples.empty()) throw ConfigError("evaluate: empty test set");
    EvalReport rep;
    rep.count = samples.size();
    rep.config_echo = opts.config_echo;
    rep.rows.resize(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const auto& s = samples[i];
        EvalRow row;
        row.id = s.id;
        row.ssim_pre = ssim_windowed(s.pre_hook, s.reference);
        row.psnr_pre = psnr(s.pre_hook, s.reference);
        row.ssim_post = ssim_windowed(s.post_hook, s.reference);
        row.psnr_post = psnr(s.post_hook, s.reference);
        rep.rows[i] = row;
    });
    for (const auto& r : rep.rows) {
        rep.mean_ssim_pre += r.ssim_pre;
        rep.mean_psnr_pre += r.psnr_pre;
        rep.mean_ssim_post += r.ssim_post;
        rep.mean_psnr_post += r.psnr_post;
    }
    const double n = static_cast<double>(rep.rows.size());
    rep.mean_ssim_pre /= n;
    rep.mean_psnr_pre /= n;
    rep.mean_ssim_post /= n;
    rep.mean_psnr_post /= n;

    if (opts.with_frechet && samples.size() >= 2) {
        FeatureExtractor<float> f(samples[0].reference.shape()[1], opts.feature_seed);
        std::vector<Tensor<float>> gen, ref;
        for (const auto& s : samples) {
            gen.push_back(s.post_hook);
            ref.push_back(s.reference);
        }
        rep.frechet = frechet_proxy(gen, ref, f, rep.frechet_regularized);
        rep.has_frechet = true;
    }
    return rep;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(concat_msg("cannot write report file: ", path));
    out << "id,ssim_pre,psnr_pre,ssim_post,psnr_post\n";
    for (const auto& r : report.rows)
        out << r.id << ',' << fmt_metric(r.ssim_pre) << ',' << fmt_metric(r.psnr_pre) << ','
            << fmt_metric(r.ssim_post) << ',' << fmt_metric(r.psnr_post) << '\n';
    out << "summary," << fmt_metric(report.mean_ssim_pre) << ',' << fmt_metric(report.mean_psnr_pre)
        << ',' << fmt_metric(report.mean_ssim_post) << ',' << fmt_metric(report.mean_psnr_post)
        << '\n';
    if (report.has_frechet)
        out << "# frechet_proxy (not comparable to classifier FID) = "
            << fmt_metric(report.frechet) << (report.frechet_regularized ? " (regularized)" : "")
            << '\n';
    out << "# samples = " << report.count << '\n';
    if (!report.config_echo.empty()) out << "# config: " << report.config_echo << '\n';
    if (!out.good()) throw ConfigError(concat_msg("error while writing report file: ", path));
}

}  // namespace ca2n
