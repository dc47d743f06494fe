// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0

#include "ca2n/layout.hpp"

namespace ca2n {

namespace {

// defaults assume a centered, aligned face; fractions of the frame side
constexpr std::array<FracBox, 4> kDefaultFractions = {{
    {0.59375, 0.3125, 0.25, 0.1875},   // RightEye
    {0.15625, 0.3125, 0.25, 0.1875},   // LeftEye
    {0.375, 0.4375, 0.25, 0.25},       // Nose
    {0.3125, 0.65625, 0.375, 0.1875},  // Mouth
}};

int even_round(double frac, int S) {
    // nearest even pixel count, half away from zero
    return 2 * static_cast<int>(std::lround(frac * S / 2.0));
}

SpatialBox to_box(const FracBox& f, int S) {
    return SpatialBox{even_round(f.x, S), even_round(f.y, S), even_round(f.w, S),
                      even_round(f.h, S)};
}

}  // namespace

const char* component_name(ComponentId id) {
    switch (id) {
        case ComponentId::RightEye: return "right_eye";
        case ComponentId::LeftEye: return "left_eye";
        case ComponentId::Nose: return "nose";
        case ComponentId::Mouth: return "mouth";
        case ComponentId::Remainder: return "remainder";
    }
    return "?";
}

ComponentLayout ComponentLayout::defaults(int S) { return from_fractions(S, kDefaultFractions); }

ComponentLayout ComponentLayout::from_fractions(int S,
                                                const std::array<FracBox, 4>& eyes_nose_mouth) {
    if (S < 32 || S % 4 != 0)
        throw InvalidInput(concat_msg("layout: frame size ", S,
                                      " invalid (must be >= 32 and divisible by 4)"));
    ComponentLayout l;
    l.frame = S;
    for (int i = 0; i < 4; ++i) {
        SpatialBox b = to_box(eyes_nose_mouth[i], S);
        ComponentId id = kComponents[i];
        if (b.w <= 0 || b.h <= 0 || b.x <= 0 || b.y <= 0 || b.x + b.w >= S || b.y + b.h >= S)
            throw InvalidInput(concat_msg("layout: ", component_name(id), " box (x=", b.x,
                                          ",y=", b.y, ",w=", b.w, ",h=", b.h,
                                          ") not strictly inside ", S, "x", S, " frame"));
        l.boxes[i] = b;
    }
    l.boxes[static_cast<int>(ComponentId::Remainder)] = SpatialBox{0, 0, S, S};
    return l;
}

SpatialBox scale_box(const SpatialBox& b, double scale) {
    auto scaled = [scale](int v) {
        double s = v * scale;
        long r = std::lround(s);
        if (std::fabs(s - static_cast<double>(r)) > 1e-9)
            throw InvalidInput(concat_msg("layout: coordinate ", v, " times scale ", scale,
                                          " is not integral"));
        return static_cast<int>(r);
    };
    return SpatialBox{scaled(b.x), scaled(b.y), scaled(b.w), scaled(b.h)};
}

}  // namespace ca2n
