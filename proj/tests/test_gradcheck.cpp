// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ca2n/gradcheck.hpp"

using namespace ca2n;

TEST_CASE("every differentiable op passes 20 randomized central-difference checks") {
    auto cases = standard_grad_cases();
    REQUIRE(cases.size() >= 30);
    for (const auto& c : cases) {
        auto r = run_case(c, 20, 0x5eed0000 + std::hash<std::string>{}(c.name));
        INFO(c.name, " max_rel_err=", r.max_rel_err, " over ", r.elements, " elements");
        CHECK(r.pass);
        CHECK(r.instances == 20);
    }
}

TEST_CASE("three-layer network gradients match finite differences") {
    Rng rng(0xabcdef);
    std::vector<Tensor<double>> inputs;
    inputs.push_back(rand_uniform<double>({2, 1, 8, 8}, rng, 0, 1));
    inputs.push_back(rand_uniform<double>({4, 1, 3, 3}, rng, -0.5, 0.5));  // conv1
    inputs.push_back(rand_uniform<double>({4}, rng, -0.1, 0.1));
    inputs.push_back(rand_uniform<double>({6, 4, 3, 3}, rng, -0.5, 0.5));  // conv2
    inputs.push_back(rand_uniform<double>({6}, rng, -0.1, 0.1));
    inputs.push_back(rand_uniform<double>({3, 6 * 2 * 2}, rng, -0.5, 0.5));  // fc
    inputs.push_back(rand_uniform<double>({3}, rng, -0.1, 0.1));
    for (std::size_t i = 1; i < inputs.size(); ++i) inputs[i].set_trainable();

    auto net = [](const std::vector<Tensor<double>>& in) {
        auto h1 = leaky_relu(conv2d(in[0], in[1], in[2], 2, 1), 0.2);
        auto h2 = relu(conv2d(h1, in[3], in[4], 2, 1));
        auto flat = reshape(h2, {2, 6 * 2 * 2});
        auto out = sigmoid(linear(flat, in[5], in[6]));
        return reduce_mean(mul(out, out));
    };
    auto r = check_gradients("three_layer", inputs, net, rng);
    INFO("max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.elements > 300);
}
