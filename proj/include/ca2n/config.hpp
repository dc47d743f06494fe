// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `key = value` file with `#` comments. Command-line
// flags are applied on top of file values through the same key/value setter.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ca2n/layout.hpp"
#include "ca2n/losses.hpp"
#include "ca2n/models.hpp"

namespace ca2n {

struct HookConfig {
    std::string mode = "identity";  // identity | unsharp | command
    double amount = 0.5;            // unsharp strength
    double radius = 1.0;            // unsharp blur sigma
    std::string command;            // external command path
};

struct RunConfig {
    int resolution = 64;
    int latent = 64;
    bool seed_set = false;
    std::uint64_t seed = 0;

    std::string data_dir;
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";

    LossWeights weights;
    double noise_epsilon = 0.05;
    AblationFlags flags;
    HookConfig hook;

    int stage1_epochs = 60;
    int stage1_batch = 16;
    double stage1_lr = 2e-3;
    double stage1_weight_decay = 0.0;
    double stage1_target_l1 = 0.0;     // early stop per component; 0 = run all epochs

    int stage2_steps = 2000;
    int stage2_batch = 2;
    double stage2_lr = 2e-4;
    double stage2_disc_lr = 2e-4;
    double stage2_weight_decay = 0.0;
    int stage2_log_interval = 10;

    int split_train = 10;
    int split_test = 1;

    // desk-scale channel plans; the full-scale preset widens these and sets
    // latent to 512
    std::vector<int> encoder_channels = {16, 32, 32, 64, 64};
    std::vector<int> decoder_channels = {64, 48, 32, 16};
    std::vector<int> mapper_channels = {32, 32, 24, 16};
    std::vector<int> generator_down = {16, 32, 32};
    int generator_residual = 1;
    std::vector<int> generator_up = {32, 16, 16};
    std::vector<int> discriminator_channels = {16, 32, 32, 64};
    bool condition_on_sketch = false;
    int cbam_reduction = 8;
    int cbam_spatial_kernel = 7;

    bool has_layout_override = false;
    std::array<FracBox, 4> layout_override{};  // right eye, left eye, nose, mouth
};

// Applies one key/value pair; throws ConfigError on unknown keys or malformed
// values. `where` names the source (file:line or flag) for error messages.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value,
              const std::string& where);

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Cross-field invariants; call after file + flag application.
void validate_config(const RunConfig& cfg);

ComponentLayout layout_from(const RunConfig& cfg);
EncoderConfig encoder_config(const RunConfig& cfg);
DecoderConfig decoder_config(const RunConfig& cfg);
MapperConfig mapper_config(const RunConfig& cfg);
GeneratorConfig generator_config(const RunConfig& cfg);
DiscriminatorConfig discriminator_config(const RunConfig& cfg);

// Ensures a directory exists (created if needed) or is readable; throws
// ConfigError otherwise. Called once per referenced path at command start.
void require_input_dir(const std::string& dir, const char* what);
void ensure_output_dir(const std::string& dir, const char* what);

}  // namespace ca2n
