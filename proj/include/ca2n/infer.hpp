// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference pipeline and the post-processing hook slot: identity, an unsharp
// mask, or an external command operating on image files.
#pragma once

#include <string>

#include "ca2n/config.hpp"
#include "ca2n/models.hpp"

namespace ca2n {

struct EnhancementHook {
    enum class Mode { Identity, Unsharp, Command };
    Mode mode = Mode::Identity;
    double amount = 0.5;  // unsharp strength; 0 is an exact identity
    double radius = 1.0;  // unsharp blur sigma
    std::string command;  // invoked as `<command> <input-path> <output-path>`
};

// Accepts "identity", "unsharp:<amount>,<radius>" and "command:<path>".
EnhancementHook parse_hook(const std::string& desc);
EnhancementHook hook_from_config(const RunConfig& cfg);

// Applies the hook to a [N,3,H,W] image in [0,1]; output has the same shape
// and range. External-command failures throw EnhancementError carrying the
// command's diagnostics; the caller still holds the original image.
Tensor<float> apply_hook(const Tensor<float>& image, const EnhancementHook& hook);

// split -> encode x5 -> map x5 -> assemble -> generate -> hook.
Tensor<float> infer_image(const TranslatorModel<float>& model, const Tensor<float>& sketch,
                          const EnhancementHook& hook);

}  // namespace ca2n
