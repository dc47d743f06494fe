// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// The two training loops: per-component reconstruction (stage 1) and the
// alternating discriminator/generator fine-tune (stage 2).
#pragma once

#include <array>
#include <atomic>
#include <string>
#include <vector>

#include "ca2n/config.hpp"
#include "ca2n/dataio.hpp"
#include "ca2n/models.hpp"

namespace ca2n {

struct Stage1Result {
    AutoencoderSet<float> models;
    // history[e][c] = mean training L1 of component c over epoch e; a
    // component that early-stopped repeats its last value
    std::vector<std::array<double, 5>> history;
    bool interrupted = false;
};

// Self-supervised reconstruction of component sketch patches, one autoencoder
// per component. Writes a per-epoch CSV log when log_path is non-empty.
Stage1Result train_stage1(const DatasetManifest& data, const RunConfig& cfg,
                          const std::string& log_path = "",
                          const std::atomic<bool>* stop = nullptr);

struct Stage2LogRow {
    long step = 0;
    double d_loss = 0;
    double total = 0;
    double content = 0;
    double adversarial = 0;
    double perceptual = 0;        // only meaningful when gl is on
    double structural = 0;        // only meaningful when gl is on
    double induced = 0;           // only meaningful when da is on
    double induced_grad_norm = 0; // only meaningful when da is on
};

struct Stage2Result {
    TranslatorModel<float> model;
    Discriminator<float> disc;
    std::vector<Stage2LogRow> log;
    long steps_run = 0;
    bool interrupted = false;
};

// Alternating D/G updates on paired (sketch, photo) data, starting from the
// stage-1 encoders. Loss terms follow the ablation flags in cfg.
Stage2Result train_stage2(const DatasetManifest& data, const AutoencoderSet<float>& stage1,
                          const RunConfig& cfg, const std::string& log_path = "",
                          const std::atomic<bool>* stop = nullptr);

// Loads the stage-1 checkpoint first; a missing file is a ConfigError.
Stage2Result train_stage2_from_checkpoint(const DatasetManifest& data,
                                          const std::string& stage1_ckpt, const RunConfig& cfg,
                                          const std::string& log_path = "",
                                          const std::atomic<bool>* stop = nullptr);

// Rebuilds the stage-1 model set from cfg and fills it from a checkpoint.
AutoencoderSet<float> build_stage1_models(const RunConfig& cfg);
AutoencoderSet<float> load_stage1(const RunConfig& cfg, const std::string& ckpt_path);

// Checkpoint name sets: stage 1 uses the "ae" prefix; stage 2 stores the
// translator ("ae", "map", "gen") plus the discriminator under "disc".
NamedParams<float> stage1_named_params(const AutoencoderSet<float>& models);
NamedParams<float> stage2_named_params(const TranslatorModel<float>& model,
                                       const Discriminator<float>& disc);

// CSV header + row layout of the stage-2 log; disabled terms contribute no
// columns at all.
std::string stage2_log_header(const AblationFlags& flags);
std::string stage2_log_row(const Stage2LogRow& row, const AblationFlags& flags);

}  // namespace ca2n
