// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// The five-region decomposition of an aligned square face frame, plus the
// split/paste pair used on both pixel images and feature maps.
#pragma once

#include <array>
#include <cmath>
#include <string>

#include "ca2n/tensor.hpp"

namespace ca2n {

enum class ComponentId { RightEye, LeftEye, Nose, Mouth, Remainder };

constexpr std::array<ComponentId, 5> kComponents = {
    ComponentId::RightEye, ComponentId::LeftEye, ComponentId::Nose, ComponentId::Mouth,
    ComponentId::Remainder};

// paste order: later entries win on overlap
constexpr std::array<ComponentId, 4> kPasteOrder = {ComponentId::Nose, ComponentId::Mouth,
                                                    ComponentId::LeftEye, ComponentId::RightEye};

const char* component_name(ComponentId id);

struct FracBox {
    double x = 0, y = 0, w = 0, h = 0;
};

struct ComponentLayout {
    int frame = 0;
    std::array<SpatialBox, 5> boxes{};  // indexed by ComponentId

    const SpatialBox& box(ComponentId id) const { return boxes[static_cast<int>(id)]; }

    // default fractional boxes scaled to S (even-pixel rounding)
    static ComponentLayout defaults(int S);
    // custom fractions for the four feature boxes; Remainder is the full frame
    static ComponentLayout from_fractions(int S, const std::array<FracBox, 4>& eyes_nose_mouth);
};

// scales a pixel box by an exact ratio (map size / frame size)
SpatialBox scale_box(const SpatialBox& b, double scale);

template <typename T>
struct ComponentSet {
    std::array<Tensor<T>, 5> patches;
    Tensor<T>& operator[](ComponentId id) { return patches[static_cast<int>(id)]; }
    const Tensor<T>& operator[](ComponentId id) const { return patches[static_cast<int>(id)]; }
};

namespace detail {
template <typename T>
void check_frame(const Tensor<T>& image, const ComponentLayout& layout, const char* op) {
    std::size_t r = image.rank();
    if (r != 3 && r != 4)
        throw InvalidInput(concat_msg(op, ": expected [C,S,S] or [N,C,S,S], got ",
                                      shape_str(image.shape())));
    int H = image.shape()[r - 2], W = image.shape()[r - 1];
    if (H != layout.frame || W != layout.frame)
        throw InvalidInput(concat_msg(op, ": image is ", H, "x", W, " but layout frame is ",
                                      layout.frame));
}
}  // namespace detail

// S^c = f(I): one crop per component; the Remainder patch is the full frame.
template <typename T>
ComponentSet<T> split(const Tensor<T>& image, const ComponentLayout& layout) {
    detail::check_frame(image, layout, "split");
    ComponentSet<T> out;
    for (ComponentId id : kComponents) out[id] = crop(image, layout.box(id));
    return out;
}

// Inverse of split: component maps overwrite the remainder map inside their
// (scaled) boxes. Gradients flow to every input.
template <typename T>
Tensor<T> paste_components(const Tensor<T>& remainder_map, const ComponentSet<T>& maps,
                           const ComponentLayout& layout, double scale = 1.0) {
    std::size_t r = remainder_map.rank();
    if (r != 3 && r != 4)
        throw InvalidInput(concat_msg("paste_components: expected [C,H,W] or [N,C,H,W], got ",
                                      shape_str(remainder_map.shape())));
    SpatialBox full = scale_box(layout.box(ComponentId::Remainder), scale);
    int H = remainder_map.shape()[r - 2], W = remainder_map.shape()[r - 1];
    if (H != full.h || W != full.w)
        throw InvalidInput(concat_msg("paste_components: remainder map is ", H, "x", W,
                                      " but scaled frame is ", full.h, "x", full.w));
    Tensor<T> out = remainder_map;
    for (ComponentId id : kPasteOrder) {
        SpatialBox b = scale_box(layout.box(id), scale);
        const Tensor<T>& patch = maps[id];
        if (!patch.defined())
            throw InvalidInput(concat_msg("paste_components: missing ", component_name(id),
                                          " map"));
        out = paste(out, patch, b);
    }
    return out;
}

}  // namespace ca2n
