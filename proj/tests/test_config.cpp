// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ca2n/config.hpp"

using namespace ca2n;

namespace {

RunConfig valid_base() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.seed_set = true;
    return cfg;
}

}  // namespace

TEST_CASE("config file parsing: keys, comments, whitespace") {
    std::string text =
        "# training preset\n"
        "resolution = 32\n"
        "latent=48\n"
        "seed = 99   # inline comment\n"
        "\n"
        "data_dir = data/faces\n"
        "weights.content = 50\n"
        "weights.adversarial = 2\n"
        "weights.perceptual = 0.5\n"
        "weights.induced = 0.25\n"
        "weights.structural = 3\n"
        "noise.epsilon = 0.1\n"
        "flags.cbam = off\n"
        "flags.da = false\n"
        "flags.gl = 1\n"
        "flags.ie = true\n"
        "stage1.epochs = 5\n"
        "stage1.batch = 4\n"
        "stage1.lr = 0.001\n"
        "stage1.target_l1 = 0.05\n"
        "stage2.steps = 123\n"
        "stage2.batch = 3\n"
        "stage2.lr = 0.0005\n"
        "stage2.disc_lr = 0.0004\n"
        "stage2.log_interval = 7\n"
        "split.train = 4\n"
        "split.test = 1\n"
        "model.encoder_channels = 8, 16, 16, 32, 32\n"
        "model.generator_residual = 2\n"
        "model.condition_on_sketch = true\n"
        "cbam.reduction = 4\n"
        "hook.mode = unsharp\n"
        "hook.amount = 0.8\n"
        "hook.radius = 1.5\n";
    RunConfig cfg = parse_config_text(text, "preset");
    CHECK(cfg.resolution == 32);
    CHECK(cfg.latent == 48);
    CHECK(cfg.seed == 99);
    CHECK(cfg.seed_set);
    CHECK(cfg.data_dir == "data/faces");
    CHECK(cfg.weights.content == 50.0);
    CHECK(cfg.weights.adv == 2.0);
    CHECK(cfg.weights.perc == 0.5);
    CHECK(cfg.weights.induced == 0.25);
    CHECK(cfg.weights.structural == 3.0);
    CHECK(cfg.noise_epsilon == 0.1);
    CHECK_FALSE(cfg.flags.cbam);
    CHECK_FALSE(cfg.flags.da);
    CHECK(cfg.flags.gl);
    CHECK(cfg.flags.ie);
    CHECK(cfg.stage1_epochs == 5);
    CHECK(cfg.stage1_batch == 4);
    CHECK(cfg.stage1_lr == 0.001);
    CHECK(cfg.stage1_target_l1 == 0.05);
    CHECK(cfg.stage2_steps == 123);
    CHECK(cfg.stage2_batch == 3);
    CHECK(cfg.stage2_lr == 0.0005);
    CHECK(cfg.stage2_disc_lr == 0.0004);
    CHECK(cfg.stage2_log_interval == 7);
    CHECK(cfg.split_train == 4);
    CHECK(cfg.split_test == 1);
    CHECK(cfg.encoder_channels == std::vector<int>{8, 16, 16, 32, 32});
    CHECK(cfg.generator_residual == 2);
    CHECK(cfg.condition_on_sketch);
    CHECK(cfg.cbam_reduction == 4);
    CHECK(cfg.hook.mode == "unsharp");
    CHECK(cfg.hook.amount == 0.8);
    CHECK(cfg.hook.radius == 1.5);
}

TEST_CASE("config flags override file values through the same setter") {
    RunConfig cfg = parse_config_text("seed = 1\nresolution = 64\n", "file");
    apply_kv(cfg, "seed", "42", "--seed");
    apply_kv(cfg, "stage2.steps", "10", "--steps");
    CHECK(cfg.seed == 42);
    CHECK(cfg.resolution == 64);
    CHECK(cfg.stage2_steps == 10);
}

TEST_CASE("config parse errors carry origin, line and key") {
    CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nnope = 3\n", "f.cfg"),
                         doctest::Contains("f.cfg:2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("nope = 3\n", "f.cfg"),
                         doctest::Contains("unknown key 'nope'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("just words\n", "f.cfg"),
                         doctest::Contains("expected 'key = value'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = abc\n", "f.cfg"),
                         doctest::Contains("integer"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("flags.cbam = maybe\n", "f.cfg"),
                         doctest::Contains("boolean"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = -4\n", "f.cfg"),
                         doctest::Contains("non-negative"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("model.encoder_channels = 8,,16\n", "f.cfg"),
                         doctest::Contains("list"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("layout.nose = 0.1,0.2,0.3\n", "f.cfg"),
                         doctest::Contains("four fractions"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("hook.mode = blur\n", "f.cfg"),
                         doctest::Contains("identity/unsharp/command"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text(" = 3\n", "f.cfg"), doctest::Contains("empty key"),
                         ConfigError);
}

TEST_CASE("config load from file and missing-file error") {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "ca2n_test_config.cfg";
    {
        std::ofstream out(p);
        out << "seed = 5\nresolution = 32\n";
    }
    RunConfig cfg = load_config(p.string());
    CHECK(cfg.seed == 5);
    CHECK(cfg.resolution == 32);
    fs::remove(p);
    CHECK_THROWS_WITH_AS(load_config(p.string()), doctest::Contains("cannot open"),
                         ConfigError);
}

TEST_CASE("config validation rejects inconsistent settings") {
    {
        RunConfig cfg;  // seed never set
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("seed"), ConfigError);
    }
    {
        auto cfg = valid_base();
        CHECK_NOTHROW(validate_config(cfg));
    }
    {
        auto cfg = valid_base();
        cfg.resolution = 30;  // not divisible by 2^3
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("divisible"), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.latent = 0;
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.weights = LossWeights{0, 0, 0, 0, 0};
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.noise_epsilon = 0.3;
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("epsilon"), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.stage1_lr = 0;
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.split_test = 0;
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.encoder_channels = {16, 32, 32};
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("5 widths"), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.generator_up = {32, 16};
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("equal depth"),
                             ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.encoder_channels = {20, 32, 32, 64, 64};  // 20 % 8 != 0
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("divisible by cbam"),
                             ConfigError);
        cfg.flags.cbam = false;  // without attention the plan is fine
        CHECK_NOTHROW(validate_config(cfg));
    }
    {
        auto cfg = valid_base();
        cfg.cbam_spatial_kernel = 6;
        CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.hook.mode = "command";
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("hook.command"),
                             ConfigError);
    }
    {
        auto cfg = valid_base();
        cfg.has_layout_override = true;
        cfg.layout_override = {FracBox{0.2, 0.3, 0.2, 0.15}, FracBox{0.6, 0.3, 0.2, 0.15},
                               FracBox{0.4, 0.45, 0.2, 0.2}, FracBox{0.35, 0.7, 0.3, 0.15}};
        CHECK_NOTHROW(validate_config(cfg));
        cfg.layout_override[0].w = 0.95;  // escapes the unit square
        CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("unit square"),
                             ConfigError);
    }
}

TEST_CASE("config to model translation") {
    auto cfg = valid_base();
    cfg.latent = 48;
    cfg.flags.cbam = false;
    cfg.condition_on_sketch = true;

    auto ec = encoder_config(cfg);
    CHECK(ec.latent == 48);
    CHECK_FALSE(ec.cbam.enabled);
    CHECK(ec.channels == cfg.encoder_channels);
    CHECK(decoder_config(cfg).channels == cfg.decoder_channels);
    CHECK(mapper_config(cfg).channels == cfg.mapper_channels);
    CHECK(mapper_config(cfg).out_channels == 32);
    auto gc = generator_config(cfg);
    CHECK(gc.down == cfg.generator_down);
    CHECK(gc.residual == cfg.generator_residual);
    CHECK(discriminator_config(cfg).condition_on_sketch);

    auto lay = layout_from(cfg);
    CHECK(lay.frame == 64);
    CHECK(lay.box(ComponentId::Remainder).w == 64);

    cfg.has_layout_override = true;
    cfg.layout_override = {FracBox{0.125, 0.25, 0.25, 0.125}, FracBox{0.625, 0.25, 0.25, 0.125},
                           FracBox{0.375, 0.4375, 0.25, 0.25}, FracBox{0.3125, 0.75, 0.375, 0.125}};
    auto lay2 = layout_from(cfg);
    CHECK(lay2.box(ComponentId::RightEye).x == 8);
    CHECK(lay2.box(ComponentId::RightEye).y == 16);
    CHECK(lay2.box(ComponentId::RightEye).w == 16);
    CHECK(lay2.box(ComponentId::RightEye).h == 8);
}

TEST_CASE("config directory checks") {
    namespace fs = std::filesystem;
    fs::path base = fs::temp_directory_path() / "ca2n_test_dirs";
    fs::remove_all(base);
    fs::create_directories(base / "in");

    CHECK_NOTHROW(require_input_dir((base / "in").string(), "data"));
    CHECK_THROWS_WITH_AS(require_input_dir((base / "missing").string(), "data"),
                         doctest::Contains("does not exist"), ConfigError);
    CHECK_THROWS_WITH_AS(require_input_dir("", "data"), doctest::Contains("not set"),
                         ConfigError);

    CHECK_NOTHROW(ensure_output_dir((base / "out" / "nested").string(), "report"));
    CHECK(fs::is_directory(base / "out" / "nested"));
    fs::remove_all(base);
}
