// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// The ca2n command line: data synthesis, the two training stages, inference,
// evaluation, the numeric self-check, and the ablation harness. Exit codes:
// 0 success, 1 runtime failure (single-line categorized error on stderr),
// 2 usage error, 130 after an interrupt (with a final checkpoint written).
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ca2n/checkpoint.hpp"
#include "ca2n/config.hpp"
#include "ca2n/dataio.hpp"
#include "ca2n/gradcheck.hpp"
#include "ca2n/infer.hpp"
#include "ca2n/metrics.hpp"
#include "ca2n/training.hpp"

namespace fs = std::filesystem;
using namespace ca2n;

namespace {

std::atomic<bool> g_stop{false};

void on_interrupt(int) { g_stop.store(true); }

void install_interrupt_handler() {
    std::signal(SIGINT, on_interrupt);
    std::signal(SIGTERM, on_interrupt);
}

std::string one_line(std::string msg) {
    for (auto& ch : msg)
        if (ch == '\n' || ch == '\r') ch = ';';
    return msg;
}

// Everything a subcommand needs to assemble a RunConfig from a file plus
// command-line overrides, applied through the same key/value setter.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string seed_flag;

    // Training must be seeded explicitly; inference and evaluation are
    // deterministic without one, so they fall back to a fixed default.
    RunConfig resolve(bool file_required, bool need_seed = true) const {
        RunConfig cfg;
        if (!config_path.empty())
            cfg = load_config(config_path);
        else if (file_required)
            throw ConfigError("a --config file is required");
        for (const auto& kv : sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError(concat_msg("--set expects key=value, got '", kv, "'"));
            apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv);
        }
        if (!seed_flag.empty()) apply_kv(cfg, "seed", seed_flag, "--seed");
        if (!need_seed && !cfg.seed_set) {
            cfg.seed = 2024;
            cfg.seed_set = true;
        }
        validate_config(cfg);
        return cfg;
    }
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args, bool file_required) {
    auto* opt = cmd->add_option("--config", args.config_path, "run configuration file");
    if (file_required) opt->required();
    cmd->add_option("--set", args.sets, "override one config key, e.g. --set stage2.steps=50");
    cmd->add_option("--seed", args.seed_flag, "override the config seed");
}

// The effective inference hook: the ablation IE flag forces identity.
EnhancementHook effective_hook(const RunConfig& cfg, const std::string& override_desc) {
    if (!override_desc.empty()) return parse_hook(override_desc);
    if (!cfg.flags.ie) return EnhancementHook{};
    return hook_from_config(cfg);
}

DatasetManifest load_split(const RunConfig& cfg, const std::string& which) {
    require_input_dir(cfg.data_dir, "data directory");
    auto data = load_dataset(cfg.data_dir, cfg.resolution);
    if (which == "all") return data;
    auto parts = split_train_test(data, cfg.split_train, cfg.split_test, cfg.seed);
    return which == "train" ? parts.first : parts.second;
}

// Rebuild the translator + discriminator shapes for a config; values come
// from a checkpoint afterwards.
struct Stage2Models {
    TranslatorModel<float> model;
    Discriminator<float> disc;
};

Stage2Models build_stage2_models(const RunConfig& cfg) {
    Stage2Models m;
    Rng scratch(0);
    auto layout = layout_from(cfg);
    auto stage1 = AutoencoderSet<float>::build(layout, 1, encoder_config(cfg),
                                               decoder_config(cfg), scratch);
    m.model = TranslatorModel<float>::build(layout, stage1, mapper_config(cfg),
                                            generator_config(cfg), scratch);
    m.disc = Discriminator<float>(discriminator_config(cfg), scratch);
    return m;
}

Stage2Models load_stage2_models(const RunConfig& cfg, const std::string& ckpt) {
    auto m = build_stage2_models(cfg);
    auto np = stage2_named_params(m.model, m.disc);
    load_checkpoint(np, ckpt);
    return m;
}

Tensor<float> read_sketch(const std::string& path, int resolution) {
    auto sketch = read_image(path, 1);
    if (sketch.dim(2) != resolution || sketch.dim(3) != resolution)
        throw InvalidInput(concat_msg("sketch '", path, "' is ", sketch.dim(3), "x",
                                      sketch.dim(2), ", expected ", resolution, "x",
                                      resolution));
    return sketch;
}

int finish_training(bool interrupted, const std::string& ckpt_path) {
    if (!interrupted) return 0;
    std::cerr << "interrupted: wrote " << ckpt_path << "\n";
    return 130;
}

// ------------------------------------------------------------- subcommands

int cmd_synth_data(int n, const std::string& seed, int size, const std::string& out) {
    RunConfig probe;  // borrow the seed parser for range checking
    apply_kv(probe, "seed", seed, "--seed");
    ensure_output_dir(out, "output directory");
    auto data = synth_faces(n, probe.seed, size);
    write_dataset(data, out);
    std::cout << "wrote " << data.size() << " pairs at " << size << "x" << size << " to " << out
              << "\n";
    return 0;
}

int cmd_train_stage1(const ConfigArgs& args) {
    auto cfg = args.resolve(true);
    auto train = load_split(cfg, "train");
    ensure_output_dir(cfg.checkpoint_dir, "checkpoint directory");
    ensure_output_dir(cfg.report_dir, "report directory");
    install_interrupt_handler();

    const std::string log = (fs::path(cfg.report_dir) / "stage1_log.csv").string();
    auto r = train_stage1(train, cfg, log, &g_stop);

    const std::string ckpt = (fs::path(cfg.checkpoint_dir) / "stage1.ckpt").string();
    save_checkpoint(stage1_named_params(r.models), ckpt);
    std::cout << "stage1: " << train.size() << " pairs, " << r.history.size() << " epochs";
    if (!r.history.empty()) {
        std::cout << ", final l1";
        for (double v : r.history.back()) std::cout << " " << fmt_metric(v);
    }
    std::cout << ", checkpoint " << ckpt << "\n";
    return finish_training(r.interrupted, ckpt);
}

int cmd_train_stage2(const ConfigArgs& args, const std::string& stage1_ckpt) {
    auto cfg = args.resolve(true);
    auto train = load_split(cfg, "train");
    ensure_output_dir(cfg.checkpoint_dir, "checkpoint directory");
    ensure_output_dir(cfg.report_dir, "report directory");
    install_interrupt_handler();

    const std::string log = (fs::path(cfg.report_dir) / "stage2_log.csv").string();
    auto r = train_stage2_from_checkpoint(train, stage1_ckpt, cfg, log, &g_stop);

    const std::string ckpt = (fs::path(cfg.checkpoint_dir) / "stage2.ckpt").string();
    save_checkpoint(stage2_named_params(r.model, r.disc), ckpt);
    std::cout << "stage2: " << train.size() << " pairs, " << r.steps_run << " steps";
    if (!r.log.empty())
        std::cout << ", final total " << fmt_metric(r.log.back().total) << ", content "
                  << fmt_metric(r.log.back().content);
    std::cout << ", checkpoint " << ckpt << "\n";
    return finish_training(r.interrupted, ckpt);
}

int cmd_infer(const ConfigArgs& args, const std::string& ckpt, const std::string& sketch_path,
              const std::string& out, const std::string& hook_desc) {
    auto cfg = args.resolve(false, false);
    auto models = load_stage2_models(cfg, ckpt);
    auto sketch = read_sketch(sketch_path, cfg.resolution);
    auto image = infer_image(models.model, sketch, effective_hook(cfg, hook_desc));
    write_image(image, out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& ckpt, const std::string& data_dir,
             const std::string& report, const std::string& split, const std::string& hook_desc) {
    auto cfg = args.resolve(false, false);
    cfg.data_dir = data_dir;
    auto data = load_split(cfg, split);
    if (data.empty()) throw ConfigError(concat_msg("no samples to evaluate in '", data_dir, "'"));
    auto models = load_stage2_models(cfg, ckpt);
    auto hook = effective_hook(cfg, hook_desc);

    std::vector<EvalSample> samples;
    samples.reserve(data.size());
    for (const auto& pair : data.samples) {
        EvalSample s;
        s.id = pair.id;
        s.reference = pair.photo;
        s.pre_hook = models.model(pair.sketch);
        s.post_hook = apply_hook(s.pre_hook, hook);
        samples.push_back(std::move(s));
    }
    EvalOptions opts;
    opts.with_frechet = samples.size() >= 2;
    opts.feature_seed = cfg.seed;
    opts.config_echo = concat_msg("resolution=", cfg.resolution, " latent=", cfg.latent,
                                  " cbam=", cfg.flags.cbam, " da=", cfg.flags.da,
                                  " gl=", cfg.flags.gl, " ie=", cfg.flags.ie);
    auto rep = evaluate_samples(samples, opts);
    write_report_csv(rep, report);
    std::cout << "eval: " << rep.count << " pairs, ssim " << fmt_metric(rep.mean_ssim_post)
              << ", psnr " << fmt_metric(rep.mean_psnr_post) << ", report " << report << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& op, const std::string& seed_text, int instances) {
    RunConfig probe;
    apply_kv(probe, "seed", seed_text, "--seed");
    auto cases = standard_grad_cases();
    bool found = op.empty(), all_pass = true;
    for (const auto& c : cases) {
        if (!op.empty() && c.name != op) continue;
        found = true;
        auto r = run_case(c, instances, probe.seed);
        all_pass = all_pass && r.pass;
        std::printf("%s %s instances=%d elements=%zu max_rel_err=%.3g\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.instances, r.elements,
                    r.max_rel_err);
    }
    if (!found) {
        std::string names;
        for (const auto& c : cases) names += (names.empty() ? "" : ", ") + c.name;
        throw InvalidInput(concat_msg("unknown op '", op, "'; available: ", names));
    }
    return all_pass ? 0 : 1;
}

// The eight flag rows of the ablation study, in the published order: the
// noise term and the global-loss terms toggle together, attention splits the
// table in half, and the enhancement hook alternates.
const AblationFlags kAblationRows[8] = {
    {false, false, false, false}, {false, false, false, true},
    {false, true, true, false},   {false, true, true, true},
    {true, false, false, false},  {true, false, false, true},
    {true, true, true, false},    {true, true, true, true},
};

std::string ablation_row_csv(const AblationFlags& f, const EvalReport& rep) {
    auto flag = [](bool b) { return b ? "1" : "0"; };
    std::string frechet = rep.has_frechet ? fmt_metric(rep.frechet) : "unavailable";
    return concat_msg(flag(f.cbam), ',', flag(f.da), ',', flag(f.gl), ',', flag(f.ie),
                      ",unavailable,unavailable,unavailable,", fmt_metric(rep.mean_ssim_post),
                      ',', fmt_metric(rep.mean_psnr_post), ',', frechet);
}

int cmd_ablate(const ConfigArgs& args, const std::string& report) {
    auto base = args.resolve(true);
    auto all = load_split(base, "all");
    auto parts = split_train_test(all, base.split_train, base.split_test, base.seed);
    if (parts.second.empty())
        throw ConfigError("ablation needs a non-empty test split");
    ensure_output_dir(fs::path(report).parent_path().empty()
                          ? "."
                          : fs::path(report).parent_path().string(),
                      "report directory");
    install_interrupt_handler();

    std::ofstream out(report, std::ios::binary);
    if (!out) throw ConfigError(concat_msg("cannot write report '", report, "'"));
    out << "cbam,da,gl,ie,fid,is,kid,ssim,psnr,frechet_proxy_noncomparable\n" << std::flush;

    for (int i = 0; i < 8; ++i) {
        if (g_stop.load()) {
            std::cerr << "interrupted: report has " << i << " of 8 rows\n";
            return 130;
        }
        RunConfig cfg = base;
        cfg.flags = kAblationRows[i];

        auto s1 = train_stage1(parts.first, cfg, "", &g_stop);
        auto s2 = train_stage2(parts.first, s1.models, cfg, "", &g_stop);
        if (s1.interrupted || s2.interrupted) {
            std::cerr << "interrupted: report has " << i << " of 8 rows\n";
            return 130;
        }

        auto hook = cfg.flags.ie ? hook_from_config(cfg) : EnhancementHook{};
        std::vector<EvalSample> samples;
        for (const auto& pair : parts.second.samples) {
            EvalSample s;
            s.id = pair.id;
            s.reference = pair.photo;
            s.pre_hook = s2.model(pair.sketch);
            s.post_hook = apply_hook(s.pre_hook, hook);
            samples.push_back(std::move(s));
        }
        EvalOptions opts;
        opts.with_frechet = samples.size() >= 2;
        opts.feature_seed = cfg.seed;
        auto rep = evaluate_samples(samples, opts);
        out << ablation_row_csv(cfg.flags, rep) << '\n' << std::flush;
        std::cout << "ablate " << (i + 1) << "/8: cbam=" << cfg.flags.cbam
                  << " da=" << cfg.flags.da << " gl=" << cfg.flags.gl << " ie=" << cfg.flags.ie
                  << " ssim=" << fmt_metric(rep.mean_ssim_post) << "\n";
    }
    std::cout << "ablation report " << report << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"component-attentive sketch-to-face translation"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic paired dataset");
    int n = 0, size = 64;
    std::string synth_seed, synth_out;
    synth->add_option("--n", n, "number of pairs")->required();
    synth->add_option("--seed", synth_seed, "generator seed")->required();
    synth->add_option("--size", size, "image resolution");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* s1 = app.add_subcommand("train-stage1", "train the component autoencoders");
    ConfigArgs s1_args;
    add_config_flags(s1, s1_args, true);

    auto* s2 = app.add_subcommand("train-stage2", "train the translator against stage 1");
    ConfigArgs s2_args;
    std::string stage1_ckpt;
    add_config_flags(s2, s2_args, true);
    s2->add_option("--stage1-ckpt", stage1_ckpt, "stage-1 checkpoint file")->required();

    auto* inf = app.add_subcommand("infer", "translate one sketch to an image");
    ConfigArgs inf_args;
    std::string inf_ckpt, inf_sketch, inf_out, inf_hook;
    add_config_flags(inf, inf_args, false);
    inf->add_option("--ckpt", inf_ckpt, "stage-2 checkpoint file")->required();
    inf->add_option("--sketch", inf_sketch, "input sketch (PGM)")->required();
    inf->add_option("--out", inf_out, "output image (PPM)")->required();
    inf->add_option("--hook", inf_hook, "identity | unsharp:<amount>,<radius> | command:<path>");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on paired data");
    ConfigArgs ev_args;
    std::string ev_ckpt, ev_data, ev_report, ev_hook, ev_split = "all";
    add_config_flags(ev, ev_args, false);
    ev->add_option("--ckpt", ev_ckpt, "stage-2 checkpoint file")->required();
    ev->add_option("--data", ev_data, "paired data directory")->required();
    ev->add_option("--report", ev_report, "report CSV path")->required();
    ev->add_option("--split", ev_split, "all | train | test")
        ->check(CLI::IsMember({"all", "train", "test"}));
    ev->add_option("--hook", ev_hook, "post-processing hook override");

    auto* gc = app.add_subcommand("gradcheck", "verify analytic gradients per op");
    std::string gc_op, gc_seed = "2024";
    int gc_instances = 20;
    gc->add_option("--op", gc_op, "check a single op by name");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_option("--instances", gc_instances, "random instances per op")
        ->check(CLI::PositiveNumber);

    auto* ab = app.add_subcommand("ablate", "run the 8-row ablation table");
    ConfigArgs ab_args;
    std::string ab_report;
    add_config_flags(ab, ab_args, true);
    ab->add_option("--report", ab_report, "ablation CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(n, synth_seed, size, synth_out);
        if (s1->parsed()) return cmd_train_stage1(s1_args);
        if (s2->parsed()) return cmd_train_stage2(s2_args, stage1_ckpt);
        if (inf->parsed()) return cmd_infer(inf_args, inf_ckpt, inf_sketch, inf_out, inf_hook);
        if (ev->parsed()) return cmd_eval(ev_args, ev_ckpt, ev_data, ev_report, ev_split, ev_hook);
        if (gc->parsed()) return cmd_gradcheck(gc_op, gc_seed, gc_instances);
        if (ab->parsed()) return cmd_ablate(ab_args, ab_report);
    } catch (const InvalidInput& e) {
        std::cerr << "error: invalid-input: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: training-diverged: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const DecodeError& e) {
        std::cerr << "error: decode: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        std::cerr << "error: checkpoint: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const EnhancementError& e) {
        std::cerr << "error: enhancement: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
