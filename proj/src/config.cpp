// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0

#include "ca2n/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ca2n {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& where, const char* expected) {
    throw ConfigError(concat_msg(where, ": key '", key, "' expects ", expected, ", got '",
                                 value, "'"));
}

long parse_long(const std::string& key, const std::string& value, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    long v = std::strtol(value.c_str(), &end, 10);
    if (errno != 0 || end == value.c_str() || *end != '\0')
        bad_value(key, value, where, "an integer");
    return v;
}

double parse_double(const std::string& key, const std::string& value, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (errno != 0 || end == value.c_str() || *end != '\0')
        bad_value(key, value, where, "a number");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value, const std::string& where) {
    if (value == "true" || value == "on" || value == "1") return true;
    if (value == "false" || value == "off" || value == "0") return false;
    bad_value(key, value, where, "a boolean (true/false/on/off/1/0)");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value,
                                const std::string& where) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(key, value, where, "a comma-separated integer list");
        out.push_back(static_cast<int>(parse_long(key, item, where)));
    }
    if (out.empty()) bad_value(key, value, where, "a comma-separated integer list");
    return out;
}

FracBox parse_frac_box(const std::string& key, const std::string& value,
                       const std::string& where) {
    std::vector<double> parts;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) break;
        parts.push_back(parse_double(key, item, where));
    }
    if (parts.size() != 4) bad_value(key, value, where, "four fractions 'x,y,w,h'");
    return FracBox{parts[0], parts[1], parts[2], parts[3]};
}

}  // namespace

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value,
              const std::string& where) {
    auto as_int = [&] { return static_cast<int>(parse_long(key, value, where)); };
    auto as_double = [&] { return parse_double(key, value, where); };
    auto as_bool = [&] { return parse_bool(key, value, where); };
    auto as_list = [&] { return parse_int_list(key, value, where); };

    if (key == "resolution") cfg.resolution = as_int();
    else if (key == "latent") cfg.latent = as_int();
    else if (key == "seed") {
        long v = parse_long(key, value, where);
        if (v < 0) bad_value(key, value, where, "a non-negative integer");
        cfg.seed = static_cast<std::uint64_t>(v);
        cfg.seed_set = true;
    } else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
    else if (key == "report_dir") cfg.report_dir = value;
    else if (key == "weights.content") cfg.weights.content = as_double();
    else if (key == "weights.adversarial") cfg.weights.adv = as_double();
    else if (key == "weights.perceptual") cfg.weights.perc = as_double();
    else if (key == "weights.induced") cfg.weights.induced = as_double();
    else if (key == "weights.structural") cfg.weights.structural = as_double();
    else if (key == "noise.epsilon") cfg.noise_epsilon = as_double();
    else if (key == "flags.cbam") cfg.flags.cbam = as_bool();
    else if (key == "flags.da") cfg.flags.da = as_bool();
    else if (key == "flags.gl") cfg.flags.gl = as_bool();
    else if (key == "flags.ie") cfg.flags.ie = as_bool();
    else if (key == "hook.mode") {
        if (value != "identity" && value != "unsharp" && value != "command")
            bad_value(key, value, where, "one of identity/unsharp/command");
        cfg.hook.mode = value;
    } else if (key == "hook.amount") cfg.hook.amount = as_double();
    else if (key == "hook.radius") cfg.hook.radius = as_double();
    else if (key == "hook.command") cfg.hook.command = value;
    else if (key == "stage1.epochs") cfg.stage1_epochs = as_int();
    else if (key == "stage1.batch") cfg.stage1_batch = as_int();
    else if (key == "stage1.lr") cfg.stage1_lr = as_double();
    else if (key == "stage1.weight_decay") cfg.stage1_weight_decay = as_double();
    else if (key == "stage1.target_l1") cfg.stage1_target_l1 = as_double();
    else if (key == "stage2.steps") cfg.stage2_steps = as_int();
    else if (key == "stage2.batch") cfg.stage2_batch = as_int();
    else if (key == "stage2.lr") cfg.stage2_lr = as_double();
    else if (key == "stage2.disc_lr") cfg.stage2_disc_lr = as_double();
    else if (key == "stage2.weight_decay") cfg.stage2_weight_decay = as_double();
    else if (key == "stage2.log_interval") cfg.stage2_log_interval = as_int();
    else if (key == "split.train") cfg.split_train = as_int();
    else if (key == "split.test") cfg.split_test = as_int();
    else if (key == "model.encoder_channels") cfg.encoder_channels = as_list();
    else if (key == "model.decoder_channels") cfg.decoder_channels = as_list();
    else if (key == "model.mapper_channels") cfg.mapper_channels = as_list();
    else if (key == "model.generator_down") cfg.generator_down = as_list();
    else if (key == "model.generator_residual") cfg.generator_residual = as_int();
    else if (key == "model.generator_up") cfg.generator_up = as_list();
    else if (key == "model.discriminator_channels") cfg.discriminator_channels = as_list();
    else if (key == "model.condition_on_sketch") cfg.condition_on_sketch = as_bool();
    else if (key == "cbam.reduction") cfg.cbam_reduction = as_int();
    else if (key == "cbam.spatial_kernel") cfg.cbam_spatial_kernel = as_int();
    else if (key == "layout.right_eye" || key == "layout.left_eye" || key == "layout.nose" ||
             key == "layout.mouth") {
        int slot = key == "layout.right_eye" ? 0
                 : key == "layout.left_eye"  ? 1
                 : key == "layout.nose"      ? 2
                                             : 3;
        cfg.layout_override[slot] = parse_frac_box(key, value, where);
        cfg.has_layout_override = true;
    } else {
        throw ConfigError(concat_msg(where, ": unknown key '", key, "'"));
    }
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(concat_msg(origin, ":", lineno,
                                         ": expected 'key = value', got '", line, "'"));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(concat_msg(origin, ":", lineno, ": empty key"));
        apply_kv(cfg, key, value, concat_msg(origin, ":", lineno));
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(concat_msg("cannot open config file '", path, "'"));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

void validate_config(const RunConfig& cfg) {
    if (!cfg.seed_set)
        throw ConfigError("seed is required (set 'seed' in the config or pass --seed); "
                          "wall-clock seeding is not supported");
    int div = 1 << static_cast<int>(cfg.generator_down.size());
    if (cfg.resolution < 16 || cfg.resolution % div != 0)
        throw ConfigError(concat_msg("resolution ", cfg.resolution,
                                     " must be >= 16 and divisible by ", div));
    if (cfg.latent < 1) throw ConfigError("latent length must be positive");
    validate_weights(cfg.weights);
    validate_noise(NoiseConfig{cfg.noise_epsilon, cfg.seed});
    if (cfg.stage1_epochs < 1 || cfg.stage2_steps < 1)
        throw ConfigError("epochs and steps must be positive");
    if (cfg.stage1_batch < 1 || cfg.stage2_batch < 1)
        throw ConfigError("batch sizes must be positive");
    if (cfg.stage1_lr <= 0 || cfg.stage2_lr <= 0 || cfg.stage2_disc_lr <= 0)
        throw ConfigError("learning rates must be positive");
    if (cfg.stage1_weight_decay < 0 || cfg.stage2_weight_decay < 0)
        throw ConfigError("weight decay must be non-negative");
    if (cfg.stage2_log_interval < 1) throw ConfigError("log interval must be positive");
    if (cfg.split_train < 1 || cfg.split_test < 1)
        throw ConfigError("split parts must be at least 1");
    if (cfg.encoder_channels.size() != 5)
        throw ConfigError(concat_msg("encoder needs exactly 5 widths, got ",
                                     cfg.encoder_channels.size()));
    if (cfg.decoder_channels.size() != 4 || cfg.mapper_channels.size() != 4)
        throw ConfigError("decoder and mapper need exactly 4 intermediate widths");
    if (cfg.generator_down.size() != cfg.generator_up.size())
        throw ConfigError("generator down/up plans must have equal depth");
    if (cfg.generator_down.empty() || cfg.generator_residual < 0)
        throw ConfigError("generator plan is empty");
    if (cfg.discriminator_channels.empty())
        throw ConfigError("discriminator plan is empty");
    if (cfg.cbam_reduction < 1 || cfg.cbam_spatial_kernel < 1 ||
        cfg.cbam_spatial_kernel % 2 == 0)
        throw ConfigError("cbam reduction must be >= 1 and the spatial kernel odd");
    if (cfg.flags.cbam)
        for (int c : cfg.encoder_channels)
            if (c % cfg.cbam_reduction != 0)
                throw ConfigError(concat_msg("encoder width ", c,
                                             " is not divisible by cbam reduction ",
                                             cfg.cbam_reduction));
    if (cfg.hook.mode == "command" && cfg.hook.command.empty())
        throw ConfigError("hook.mode = command requires hook.command");
    if (cfg.hook.amount < 0 || cfg.hook.radius <= 0)
        throw ConfigError("unsharp amount must be >= 0 and radius positive");
    if (cfg.has_layout_override) {
        for (const auto& b : cfg.layout_override)
            if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > 1 || b.y + b.h > 1)
                throw ConfigError("layout override boxes must lie inside the unit square "
                                  "with positive size");
        layout_from(cfg);  // surfaces rounding/overlap errors early
    }
}

ComponentLayout layout_from(const RunConfig& cfg) {
    return cfg.has_layout_override
               ? ComponentLayout::from_fractions(cfg.resolution, cfg.layout_override)
               : ComponentLayout::defaults(cfg.resolution);
}

EncoderConfig encoder_config(const RunConfig& cfg) {
    EncoderConfig ec;
    ec.channels = cfg.encoder_channels;
    ec.latent = cfg.latent;
    ec.cbam.enabled = cfg.flags.cbam;
    ec.cbam.reduction = cfg.cbam_reduction;
    ec.cbam.spatial_kernel = cfg.cbam_spatial_kernel;
    return ec;
}

DecoderConfig decoder_config(const RunConfig& cfg) {
    DecoderConfig dc;
    dc.channels = cfg.decoder_channels;
    return dc;
}

MapperConfig mapper_config(const RunConfig& cfg) {
    MapperConfig mc;
    mc.channels = cfg.mapper_channels;
    return mc;
}

GeneratorConfig generator_config(const RunConfig& cfg) {
    GeneratorConfig gc;
    gc.down = cfg.generator_down;
    gc.residual = cfg.generator_residual;
    gc.up = cfg.generator_up;
    return gc;
}

DiscriminatorConfig discriminator_config(const RunConfig& cfg) {
    DiscriminatorConfig dc;
    dc.channels = cfg.discriminator_channels;
    dc.condition_on_sketch = cfg.condition_on_sketch;
    return dc;
}

void require_input_dir(const std::string& dir, const char* what) {
    if (dir.empty()) throw ConfigError(concat_msg(what, " directory is not set"));
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        throw ConfigError(concat_msg(what, " directory '", dir, "' does not exist"));
}

void ensure_output_dir(const std::string& dir, const char* what) {
    if (dir.empty()) throw ConfigError(concat_msg(what, " directory is not set"));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw ConfigError(concat_msg("cannot create ", what, " directory '", dir, "'"));
}

}  // namespace ca2n
