// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ca2n/layout.hpp"

using namespace ca2n;
using TD = Tensor<double>;

namespace {
bool box_eq(const SpatialBox& b, int x, int y, int w, int h) {
    return b.x == x && b.y == y && b.w == w && b.h == h;
}
}  // namespace

TEST_CASE("default boxes at S=128") {
    auto l = ComponentLayout::defaults(128);
    CHECK(box_eq(l.box(ComponentId::LeftEye), 20, 40, 32, 24));
    CHECK(box_eq(l.box(ComponentId::RightEye), 76, 40, 32, 24));
    CHECK(box_eq(l.box(ComponentId::Nose), 48, 56, 32, 32));
    CHECK(box_eq(l.box(ComponentId::Mouth), 40, 84, 48, 24));
    CHECK(box_eq(l.box(ComponentId::Remainder), 0, 0, 128, 128));
}

TEST_CASE("S=64 boxes are exactly the halved S=128 boxes") {
    auto big = ComponentLayout::defaults(128);
    auto small = ComponentLayout::defaults(64);
    for (ComponentId id : kComponents) {
        CHECK(small.box(id).x * 2 == big.box(id).x);
        CHECK(small.box(id).y * 2 == big.box(id).y);
        CHECK(small.box(id).w * 2 == big.box(id).w);
        CHECK(small.box(id).h * 2 == big.box(id).h);
    }
}

TEST_CASE("frame size validation") {
    CHECK_THROWS_AS(ComponentLayout::defaults(31), InvalidInput);
    CHECK_THROWS_AS(ComponentLayout::defaults(30), InvalidInput);
    CHECK_NOTHROW(ComponentLayout::defaults(32));
}

TEST_CASE("split basics") {
    auto l = ComponentLayout::defaults(64);
    Rng rng(3);
    auto img = rand_uniform<double>({3, 64, 64}, rng, 0, 1);
    auto parts = split(img, l);
    CHECK(parts[ComponentId::Remainder].value() == img.value());
    for (ComponentId id : kComponents) {
        auto b = l.box(id);
        CHECK(parts[id].shape() == Shape{3, b.h, b.w});
    }
    CHECK_THROWS_AS(split(TD::zeros({3, 32, 32}), l), InvalidInput);
}

TEST_CASE("split carries each box corner marker") {
    auto l = ComponentLayout::defaults(64);
    auto img = TD::zeros({1, 64, 64});
    double marker = 1.0;
    for (ComponentId id : {ComponentId::RightEye, ComponentId::LeftEye, ComponentId::Nose,
                           ComponentId::Mouth}) {
        auto b = l.box(id);
        img.raw_value()[static_cast<std::size_t>(b.y) * 64 + b.x] = marker;
        marker += 1.0;
    }
    auto parts = split(img, l);
    marker = 1.0;
    for (ComponentId id : {ComponentId::RightEye, ComponentId::LeftEye, ComponentId::Nose,
                           ComponentId::Mouth}) {
        CHECK(parts[id].at({0, 0, 0}) == marker);
        marker += 1.0;
    }
}

TEST_CASE("paste(split(x)) is a bit-exact round trip") {
    for (int S : {32, 64, 128}) {
        auto l = ComponentLayout::defaults(S);
        Rng rng(100 + S);
        for (int i = 0; i < 10; ++i) {
            auto img = rand_uniform<float>({3, S, S}, rng, 0, 1);
            auto parts = split(img, l);
            auto back = paste_components(parts[ComponentId::Remainder], parts, l);
            CHECK(back.value() == img.value());
        }
    }
}

TEST_CASE("split and paste are linear") {
    auto l = ComponentLayout::defaults(32);
    Rng rng(5);
    auto a = rand_uniform<double>({2, 32, 32}, rng, -1, 1);
    auto b = rand_uniform<double>({2, 32, 32}, rng, -1, 1);
    auto sa = split(a, l), sb = split(b, l), ssum = split(add(a, b), l);
    for (ComponentId id : kComponents) {
        auto direct = add(sa[id], sb[id]);
        for (std::size_t i = 0; i < direct.numel(); ++i)
            CHECK(ssum[id].value()[i] == direct.value()[i]);
    }
}

TEST_CASE("zero remainder plus one component is nonzero only in its box") {
    // RightEye pastes last, so nothing can overwrite it
    auto l = ComponentLayout::defaults(32);
    ComponentSet<double> maps;
    for (ComponentId id : kComponents) {
        auto b = l.box(id);
        maps[id] = TD::zeros({2, b.h, b.w});
    }
    auto eb = l.box(ComponentId::RightEye);
    maps[ComponentId::RightEye] = TD::filled({2, eb.h, eb.w}, 3.0);
    auto out = paste_components(maps[ComponentId::Remainder], maps, l);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                bool inside = x >= eb.x && x < eb.x + eb.w && y >= eb.y && y < eb.y + eb.h;
                CHECK(out.at({c, y, x}) == (inside ? 3.0 : 0.0));
            }
}

TEST_CASE("default eye boxes clip the nose corners under paste precedence") {
    // the default boxes overlap slightly: eyes paste after the nose and win
    auto l = ComponentLayout::defaults(32);
    auto nb = l.box(ComponentId::Nose), lb = l.box(ComponentId::LeftEye);
    REQUIRE(lb.x + lb.w > nb.x);
    REQUIRE(lb.y + lb.h > nb.y);
    ComponentSet<double> maps;
    for (ComponentId id : kComponents) {
        auto b = l.box(id);
        maps[id] = TD::zeros({1, b.h, b.w});
    }
    maps[ComponentId::Nose] = TD::filled({1, nb.h, nb.w}, 3.0);
    auto out = paste_components(maps[ComponentId::Remainder], maps, l);
    CHECK(out.at({0, nb.y, lb.x + lb.w - 1}) == 0.0);       // clipped by LeftEye
    CHECK(out.at({0, nb.y + nb.h - 1, nb.x}) == 3.0);       // untouched nose area
}

TEST_CASE("overlap precedence follows the paste order") {
    // custom layout with overlapping eye boxes
    std::array<FracBox, 4> fr = {{
        {0.25, 0.25, 0.25, 0.25},  // RightEye
        {0.3125, 0.25, 0.25, 0.25},  // LeftEye overlaps RightEye
        {0.0625, 0.625, 0.25, 0.25},
        {0.625, 0.625, 0.25, 0.25},
    }};
    auto l = ComponentLayout::from_fractions(32, fr);
    ComponentSet<double> maps;
    double v = 1.0;
    for (ComponentId id : kComponents) {
        auto b = l.box(id);
        maps[id] = TD::filled({1, b.h, b.w}, id == ComponentId::Remainder ? 0.0 : v);
        v += 1.0;
    }
    auto out = paste_components(maps[ComponentId::Remainder], maps, l);
    // RightEye pastes after LeftEye, so the overlap carries RightEye's constant
    auto rb = l.box(ComponentId::RightEye), lb = l.box(ComponentId::LeftEye);
    int ox = std::max(rb.x, lb.x);  // a pixel in the overlap
    CHECK(rb.x + rb.w > lb.x);      // boxes really overlap
    CHECK(out.at({0, rb.y, ox}) == 1.0);
}

TEST_CASE("gradients route through paste_components") {
    // non-overlapping layout so the nose region belongs to the nose map alone
    std::array<FracBox, 4> fr = {{
        {0.625, 0.125, 0.25, 0.1875},
        {0.125, 0.125, 0.25, 0.1875},
        {0.375, 0.4375, 0.25, 0.25},
        {0.3125, 0.75, 0.375, 0.1875},
    }};
    auto l = ComponentLayout::from_fractions(32, fr);
    ComponentSet<double> maps;
    for (ComponentId id : kComponents) {
        auto b = l.box(id);
        maps[id] = TD::zeros({1, b.h, b.w});
        maps[id].set_trainable();
    }
    auto out = paste_components(maps[ComponentId::Remainder], maps, l);
    auto nb = l.box(ComponentId::Nose);
    backward(reduce_sum(crop(out, nb)));

    // nose map: all ones
    for (double g : maps[ComponentId::Nose].grad()) CHECK(g == 1.0);
    // remainder map: zero inside the nose box (it was overwritten)
    const auto& rg = maps[ComponentId::Remainder].grad();
    for (int y = nb.y; y < nb.y + nb.h; ++y)
        for (int x = nb.x; x < nb.x + nb.w; ++x) CHECK(rg[static_cast<std::size_t>(y) * 32 + x] == 0.0);
}

TEST_CASE("scale_box handles exact and inexact ratios") {
    SpatialBox b{20, 40, 32, 24};
    auto half = scale_box(b, 0.5);
    CHECK(box_eq(half, 10, 20, 16, 12));
    CHECK_THROWS_AS(scale_box(SpatialBox{21, 0, 2, 2}, 0.5), InvalidInput);
}
