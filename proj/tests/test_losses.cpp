// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ca2n/gradcheck.hpp"
#include "ca2n/losses.hpp"

using namespace ca2n;
using TF = Tensor<float>;
using TD = Tensor<double>;

TEST_CASE("content l1 basics and oracle") {
    Rng rng(101);
    auto x = rand_uniform<double>({2, 3, 4, 4}, rng, 0, 1);
    CHECK(content_l1(x, x).item() == 0.0);

    auto ones = TD::filled({2, 2}, 1.0);
    auto zeros = TD::zeros({2, 2});
    CHECK(content_l1(ones, zeros).item() == 1.0);

    auto y = rand_uniform<double>({2, 3, 4, 4}, rng, 0, 1);
    double oracle = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) oracle += std::fabs(x.value()[i] - y.value()[i]);
    oracle /= static_cast<double>(x.numel());
    CHECK(content_l1(x, y).item() == doctest::Approx(oracle).epsilon(1e-6));

    CHECK_THROWS_AS(content_l1(x, ones), InvalidInput);
}

TEST_CASE("adversarial losses: balanced value, limits, oracle, validation") {
    auto half = TD::filled({4, 1}, 0.5);
    CHECK(adversarial_d(half, half).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));

    auto near_one = TD::filled({4, 1}, 1.0 - 1e-6);
    CHECK(adversarial_g(near_one).item() < 2e-6);
    CHECK(adversarial_g(near_one).item() > 0.0);

    Rng rng(103);
    auto real = rand_uniform<double>({8, 1}, rng, 0.05, 0.95);
    auto fake = rand_uniform<double>({8, 1}, rng, 0.05, 0.95);
    double od = 0, og = 0;
    for (int i = 0; i < 8; ++i) {
        od += -std::log(real.value()[i]) / 8 - std::log(1 - fake.value()[i]) / 8;
        og += -std::log(fake.value()[i]) / 8;
    }
    CHECK(adversarial_d(real, fake).item() == doctest::Approx(od).epsilon(1e-9));
    CHECK(adversarial_g(fake).item() == doctest::Approx(og).epsilon(1e-9));

    CHECK_THROWS_AS(adversarial_g(TD::filled({1}, 0.0)), InvalidInput);
    CHECK_THROWS_AS(adversarial_g(TD::filled({1}, 1.0)), InvalidInput);
    CHECK_THROWS_AS(adversarial_d(TD::filled({1}, -0.1), half), InvalidInput);
    CHECK_THROWS_AS(adversarial_d(half, TD::filled({1}, 1.5)), InvalidInput);
}

TEST_CASE("perceptual distance: identity, seeding, oracle") {
    FeatureExtractor<double> f(3, 777);
    Rng rng(105);
    auto x = rand_uniform<double>({2, 3, 16, 16}, rng, 0, 1);
    CHECK(perceptual(x, x, f).item() == 0.0);

    auto y = rand_uniform<double>({2, 3, 16, 16}, rng, 0, 1);
    double p = perceptual(x, y, f).item();
    CHECK(p > 0.0);

    // oracle: run the extractor twice, take row-wise euclidean norms directly
    auto fx = f(x);
    auto fy = f(y);
    REQUIRE(fx.shape().size() == 2);
    const int n = fx.shape()[0], d = fx.shape()[1];
    double oracle = 0;
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < d; ++j) {
            double diff = fx.value()[i * d + j] - fy.value()[i * d + j];
            s += diff * diff;
        }
        oracle += std::sqrt(s);
    }
    oracle /= n;
    CHECK(p == doctest::Approx(oracle).epsilon(1e-6));

    FeatureExtractor<double> same(3, 777), other(3, 778);
    CHECK(same(x).value() == fx.value());
    CHECK(other(x).value() != fx.value());

    CHECK_THROWS_AS(perceptual(x, TD::zeros({2, 3, 16, 12}), f), InvalidInput);
    CHECK_THROWS_AS(f(TD::zeros({1, 3, 8, 8})), InvalidInput);
    CHECK_THROWS_AS(f(TD::zeros({1, 1, 16, 16})), InvalidInput);
}

TEST_CASE("perturb and induced: identity at zero, range, bound, recorded draw") {
    Rng rng(107);
    auto x = rand_uniform<float>({1, 3, 8, 8}, rng, 0, 1);

    NoiseSource<float> z0(9);
    auto p0 = perturb(x, 0.0, z0.draw(x.shape()));
    CHECK(p0.value() == x.value());
    NoiseSource<float> z1(9);
    CHECK(induced(x, 0.0, z1).item() == 0.0f);

    for (int trial = 0; trial < 20; ++trial) {
        auto img = rand_uniform<float>({1, 3, 6, 6}, rng, 0, 1);
        NoiseSource<float> src(1000 + trial);
        float v = induced(img, 0.25, src).item();
        CHECK(v >= 0.0f);
        CHECK(v <= 0.25f);
        auto pert = perturb(img, 0.25, src.last());
        for (float w : pert.value()) {
            CHECK(w >= 0.0f);
            CHECK(w <= 1.0f);
        }
    }

    // interior image: no clamping, so out - in reproduces the recorded draw
    const double eps = 0.2;
    auto interior = rand_uniform<double>({1, 1, 8, 8}, rng, 0.25, 0.75);
    NoiseSource<double> src(42);
    double v = induced(interior, eps, src).item();
    auto pert = perturb(interior, eps, src.last());
    double recomputed = 0;
    for (std::size_t i = 0; i < interior.numel(); ++i) {
        double d = pert.value()[i] - interior.value()[i];
        CHECK(d == doctest::Approx(eps * src.last().value()[i]).epsilon(1e-12));
        recomputed += std::fabs(eps * src.last().value()[i]);
    }
    CHECK(v == doctest::Approx(recomputed / interior.numel()).epsilon(1e-12));

    // fixed seed makes induced a deterministic function of the image
    NoiseSource<double> sa(55), sb(55);
    CHECK(induced(interior, eps, sa).item() == induced(interior, eps, sb).item());
}

TEST_CASE("induced gradient lives on clamped pixels only") {
    auto x = TD::from_data({1, 1, 1, 4}, {0.5, 0.5, 0.98, 0.02}).set_trainable();
    auto noise = TD::from_data({1, 1, 1, 4}, {0.4, -0.4, 0.9, -0.9});
    auto loss = reduce_mean(abs(sub(perturb(x, 0.1, noise), x)));
    backward(loss);
    CHECK(x.grad()[0] == 0.0);  // 0.54: interior
    CHECK(x.grad()[1] == 0.0);  // 0.46: interior
    CHECK(x.grad()[2] != 0.0);  // 1.07: clamped high
    CHECK(x.grad()[3] != 0.0);  // -0.07: clamped low
}

TEST_CASE("global ssim: identity, symmetry, constant-image value") {
    Rng rng(109);
    auto x = rand_uniform<double>({2, 3, 8, 8}, rng, 0, 1);
    CHECK(ssim_global(x, x).item() == 1.0);

    auto y = rand_uniform<double>({2, 3, 8, 8}, rng, 0, 1);
    CHECK(ssim_global(x, y).item() == ssim_global(y, x).item());
    CHECK(ssim_global(x, y).item() < 1.0);
    CHECK(ssim_global(x, y).item() > -1.0);

    auto a = TD::zeros({1, 1, 4, 4});
    auto b = TD::filled({1, 1, 4, 4}, 1.0);
    const double expect = 1e-4 / (1.0 + 1e-4);
    CHECK(ssim_global(a, b).item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(structural_loss(a, b).item() == doctest::Approx(1.0 - expect).epsilon(1e-12));

    CHECK(structural_loss(x, x).item() == 0.0);
    for (int t = 0; t < 10; ++t) {
        auto u = rand_uniform<double>({1, 2, 5, 5}, rng, 0, 1);
        auto v = rand_uniform<double>({1, 2, 5, 5}, rng, 0, 1);
        double s = structural_loss(u, v).item();
        CHECK(s >= 0.0);
        CHECK(s < 2.0);
    }
    CHECK_THROWS_AS(ssim_global(x, TD::zeros({2, 3, 8, 7})), InvalidInput);
    CHECK_THROWS_AS(ssim_global(TD::zeros({3, 3}), TD::zeros({3, 3})), InvalidInput);
}

TEST_CASE("global objective: selection, breakdown, linearity, divergence") {
    LossTerms<double> t;
    t.content = TD::scalar(0.3);
    t.adversarial = TD::scalar(1.1);
    t.perceptual = TD::scalar(2.5);
    t.induced = TD::scalar(0.04);
    t.structural = TD::scalar(0.9);

    LossWeights only_content;
    only_content.content = 1;
    only_content.adv = only_content.perc = only_content.induced = only_content.structural = 0;
    auto obj = global_objective(t, only_content, PipelineToggles{});
    CHECK(obj.total.item() == 0.3);
    REQUIRE(obj.terms.size() == 5);

    PipelineToggles no_da = ablation_flags_to_pipeline(AblationFlags{true, false, true, true});
    auto obj2 = global_objective(t, LossWeights{}, no_da);
    REQUIRE(obj2.terms.size() == 4);
    for (const auto& e : obj2.terms) CHECK(e.name != "induced");

    PipelineToggles no_gl = ablation_flags_to_pipeline(AblationFlags{true, true, false, true});
    auto obj3 = global_objective(t, LossWeights{}, no_gl);
    REQUIRE(obj3.terms.size() == 3);  // content, adversarial, induced

    LossWeights w;
    w.content = 2.5;
    w.adv = 0.7;
    w.perc = 1.3;
    w.induced = 4.0;
    w.structural = 0.25;
    auto obj4 = global_objective(t, w, PipelineToggles{});
    double hand = 2.5 * 0.3 + 0.7 * 1.1 + 1.3 * 2.5 + 4.0 * 0.04 + 0.25 * 0.9;
    CHECK(obj4.total.item() == doctest::Approx(hand).epsilon(1e-9));

    // doubling one weight exactly doubles that term's weighted contribution
    LossWeights w2 = w;
    w2.perc = 2 * w.perc;
    auto obj5 = global_objective(t, w2, PipelineToggles{});
    CHECK(obj5.terms[2].name == "perceptual");
    CHECK(obj5.terms[2].weighted == 2 * obj4.terms[2].weighted);

    LossTerms<double> bad = t;
    bad.induced = TD::scalar(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_WITH_AS(global_objective(bad, w, PipelineToggles{}),
                         doctest::Contains("induced"), TrainingDiverged);

    LossTerms<double> missing = t;
    missing.perceptual = TD{};
    CHECK_THROWS_AS(global_objective(missing, w, PipelineToggles{}), InvalidInput);

    LossWeights zero;
    zero.content = zero.adv = zero.perc = zero.induced = zero.structural = 0;
    CHECK_THROWS_AS(global_objective(t, zero, PipelineToggles{}), ConfigError);
    LossWeights neg;
    neg.adv = -1;
    CHECK_THROWS_AS(global_objective(t, neg, PipelineToggles{}), ConfigError);
}

TEST_CASE("noise config validation") {
    NoiseConfig ok;
    validate_noise(ok);
    NoiseConfig hi;
    hi.epsilon = 0.3;
    CHECK_THROWS_AS(validate_noise(hi), ConfigError);
    NoiseConfig zero;
    zero.epsilon = 0;
    CHECK_THROWS_AS(validate_noise(zero), ConfigError);
}

TEST_CASE("loss gradients pass finite differences") {
    Rng rng(0x10553);
    SUBCASE("content") {
        std::vector<TD> in = {rand_uniform<double>({2, 2, 4, 4}, rng, 0, 1).set_trainable(),
                              rand_uniform<double>({2, 2, 4, 4}, rng, 0, 1).set_trainable()};
        auto r = check_gradients(
            "content", in, [](const std::vector<TD>& v) { return content_l1(v[0], v[1]); }, rng);
        CHECK(r.pass);
    }
    SUBCASE("adversarial") {
        std::vector<TD> in = {rand_uniform<double>({6, 1}, rng, 0.1, 0.9).set_trainable(),
                              rand_uniform<double>({6, 1}, rng, 0.1, 0.9).set_trainable()};
        auto rd = check_gradients(
            "adv_d", in, [](const std::vector<TD>& v) { return adversarial_d(v[0], v[1]); }, rng);
        CHECK(rd.pass);
        auto rg = check_gradients(
            "adv_g", in, [](const std::vector<TD>& v) { return adversarial_g(v[1]); }, rng);
        CHECK(rg.pass);
    }
    SUBCASE("perceptual") {
        FeatureExtractor<double> f(1, 31);
        std::vector<TD> in = {rand_uniform<double>({1, 1, 16, 16}, rng, 0, 1).set_trainable(),
                              rand_uniform<double>({1, 1, 16, 16}, rng, 0, 1).set_trainable()};
        auto r = check_gradients_guarded(
            "perceptual", in,
            [&f](const std::vector<TD>& v) { return perceptual(v[0], v[1], f); }, rng, 0.5);
        CHECK(r.pass);
        CHECK(r.elements > 100);
    }
    SUBCASE("ssim and structural") {
        std::vector<TD> in = {rand_uniform<double>({1, 2, 5, 5}, rng, 0.1, 0.9).set_trainable(),
                              rand_uniform<double>({1, 2, 5, 5}, rng, 0.1, 0.9).set_trainable()};
        auto rs = check_gradients(
            "ssim", in, [](const std::vector<TD>& v) { return ssim_global(v[0], v[1]); }, rng);
        CHECK(rs.pass);
        auto rl = check_gradients(
            "structural", in,
            [](const std::vector<TD>& v) { return structural_loss(v[0], v[1]); }, rng);
        CHECK(rl.pass);
    }
    SUBCASE("induced") {
        const double eps = 0.2;
        TD x, noise;
        // keep every pixel's pre-clamp value and clamp residual away from kinks
        for (int attempt = 0;; ++attempt) {
            REQUIRE(attempt < 100);
            x = rand_uniform<double>({1, 1, 6, 6}, rng, 0, 1);
            noise = rand_uniform<double>({1, 1, 6, 6}, rng, -1, 1);
            bool ok = true;
            for (std::size_t i = 0; i < x.numel(); ++i) {
                double pre = x.value()[i] + eps * noise.value()[i];
                double xi = x.value()[i];
                if (std::fabs(pre) < 2e-3 || std::fabs(pre - 1) < 2e-3) ok = false;
                if (pre > 1 && std::fabs(1 - xi) < 2e-3) ok = false;
                if (pre < 0 && std::fabs(xi) < 2e-3) ok = false;
            }
            if (ok) break;
        }
        std::vector<TD> in = {x.set_trainable()};
        auto r = check_gradients(
            "induced", in,
            [&noise, eps](const std::vector<TD>& v) {
                return reduce_mean(abs(sub(perturb(v[0], eps, noise), v[0])));
            },
            rng);
        CHECK(r.pass);
    }
}
