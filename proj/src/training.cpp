// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0

#include "ca2n/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "ca2n/checkpoint.hpp"
#include "ca2n/losses.hpp"
#include "ca2n/metrics.hpp"
#include "ca2n/optimizer.hpp"

namespace ca2n {

namespace {

std::string fmt_loss(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.8g", v);
    return buf;
}

// Raw per-sample buffers assembled into fresh leaf batches on demand.
struct PatchStore {
    int c = 1, h = 0, w = 0;
    std::vector<std::vector<float>> rows;

    Tensor<float> batch(const std::vector<int>& idx) const {
        std::vector<float> data;
        data.reserve(idx.size() * rows[0].size());
        for (int i : idx) data.insert(data.end(), rows[i].begin(), rows[i].end());
        return Tensor<float>::from_data({static_cast<int>(idx.size()), c, h, w},
                                        std::move(data));
    }
};

void check_dataset(const DatasetManifest& data, const RunConfig& cfg, const char* op) {
    if (data.empty()) throw InvalidInput(concat_msg(op, ": dataset is empty"));
    if (data.resolution != cfg.resolution)
        throw InvalidInput(concat_msg(op, ": dataset resolution ", data.resolution,
                                      " does not match configured resolution ",
                                      cfg.resolution));
}

// Float sigmoids can round to exactly 0 or 1; squash into the open interval
// the adversarial losses require. Saturated scores then carry zero gradient.
Tensor<float> squash_scores(const Tensor<float>& s) {
    return clamp(s, 1e-7f, 1.0f - 1e-7f);
}

Tensor<float> disc_input(const Tensor<float>& image, const Tensor<float>& sketch, bool cond) {
    if (!cond) return image;
    return concat<float>({image, sketch}, 1);
}

double raw_term(const Objective<float>& obj, const char* name) {
    for (const auto& t : obj.terms)
        if (t.name == name) return t.raw;
    return 0.0;
}

}  // namespace

Stage1Result train_stage1(const DatasetManifest& data, const RunConfig& cfg,
                          const std::string& log_path, const std::atomic<bool>* stop) {
    check_dataset(data, cfg, "train_stage1");
    const ComponentLayout layout = layout_from(cfg);
    Rng rng(cfg.seed);
    Stage1Result res;
    res.models = AutoencoderSet<float>::build(layout, 1, encoder_config(cfg),
                                              decoder_config(cfg), rng);

    std::array<PatchStore, 5> stores;
    for (ComponentId id : kComponents) {
        auto b = layout.box(id);
        auto& st = stores[static_cast<int>(id)];
        st.h = b.h;
        st.w = b.w;
        st.rows.reserve(data.size());
        for (const auto& s : data.samples) st.rows.push_back(crop(s.sketch, b).value());
    }

    std::array<Rng, 5> orders = {rng.fork(1000), rng.fork(1001), rng.fork(1002),
                                 rng.fork(1003), rng.fork(1004)};
    std::array<std::vector<double>, 5> losses;
    std::array<std::exception_ptr, 5> errors;
    std::atomic<bool> interrupted{false};

    auto train_component = [&](std::size_t ci) {
        try {
            ComponentId id = kComponents[ci];
            auto& ae = res.models[id];
            NamedParams<float> np;
            ae.params(np, "ae");
            Optimizer<float> opt(param_tensors(np), Optimizer<float>::Kind::Adam,
                                 cfg.stage1_lr, cfg.stage1_weight_decay);
            Rng order = orders[ci];
            std::vector<int> idx(data.size());
            std::iota(idx.begin(), idx.end(), 0);
            const std::size_t B = static_cast<std::size_t>(cfg.stage1_batch);
            for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
                // Cosine decay to a 5% floor over the epoch budget: the L1
                // floor late in training is set by how finely Adam can
                // settle, not by capacity, so the step size must shrink.
                const double prog = cfg.stage1_epochs > 1
                                        ? static_cast<double>(epoch) / (cfg.stage1_epochs - 1)
                                        : 0.0;
                opt.set_lr(cfg.stage1_lr *
                           (0.05 + 0.95 * 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846))));
                for (std::size_t i = idx.size() - 1; i > 0; --i)
                    std::swap(idx[i], idx[order.uniform_int(0, static_cast<int>(i))]);
                double sum = 0;
                std::size_t seen = 0;
                for (std::size_t off = 0; off < idx.size(); off += B) {
                    if (stop && stop->load()) {
                        interrupted = true;
                        break;
                    }
                    std::vector<int> bi(idx.begin() + off,
                                        idx.begin() + std::min(off + B, idx.size()));
                    auto x = stores[ci].batch(bi);
                    opt.zero_grad();
                    auto loss = content_l1(ae.reconstruct(x), x);
                    double v = loss.value()[0];
                    if (!std::isfinite(v))
                        throw TrainingDiverged(concat_msg("stage1: non-finite loss at epoch ",
                                                          epoch, " for component ",
                                                          component_name(id)));
                    backward(loss);
                    opt.step();
                    sum += v * static_cast<double>(bi.size());
                    seen += bi.size();
                }
                if (seen == 0) break;
                double mean = sum / static_cast<double>(seen);
                losses[ci].push_back(mean);
                if (interrupted.load()) break;
                if (cfg.stage1_target_l1 > 0 && mean < cfg.stage1_target_l1) break;
            }
        } catch (...) {
            errors[ci] = std::current_exception();
        }
    };

    // The five autoencoders are independent; each runs entirely on one thread,
    // so multi-threading does not change any component's arithmetic.
    int nw = std::min(worker_threads(), 5);
    if (nw <= 1) {
        for (std::size_t ci = 0; ci < 5; ++ci) train_component(ci);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nw; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t ci = static_cast<std::size_t>(t); ci < 5;
                     ci += static_cast<std::size_t>(nw))
                    train_component(ci);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::size_t epochs = 0;
    for (const auto& l : losses) epochs = std::max(epochs, l.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::array<double, 5> row{};
        for (std::size_t ci = 0; ci < 5; ++ci)
            row[ci] = losses[ci].empty() ? 0.0
                                         : losses[ci][std::min(e, losses[ci].size() - 1)];
        res.history.push_back(row);
    }
    res.interrupted = interrupted.load();

    if (!log_path.empty()) {
        std::ofstream out(log_path, std::ios::binary);
        if (!out) throw ConfigError(concat_msg("cannot write log '", log_path, "'"));
        out << "epoch,component,l1\n";
        for (std::size_t e = 0; e < epochs; ++e)
            for (std::size_t ci = 0; ci < 5; ++ci)
                if (e < losses[ci].size())
                    out << e << ',' << component_name(kComponents[ci]) << ','
                        << fmt_loss(losses[ci][e]) << '\n';
    }
    return res;
}

std::string stage2_log_header(const AblationFlags& flags) {
    std::string h = "step,d_loss,total,content,adversarial";
    if (flags.gl) h += ",perceptual,structural";
    if (flags.da) h += ",induced,induced_grad_norm";
    return h;
}

std::string stage2_log_row(const Stage2LogRow& row, const AblationFlags& flags) {
    std::string s = concat_msg(row.step, ',', fmt_loss(row.d_loss), ',', fmt_loss(row.total),
                               ',', fmt_loss(row.content), ',', fmt_loss(row.adversarial));
    if (flags.gl)
        s += concat_msg(',', fmt_loss(row.perceptual), ',', fmt_loss(row.structural));
    if (flags.da)
        s += concat_msg(',', fmt_loss(row.induced), ',', fmt_loss(row.induced_grad_norm));
    return s;
}

Stage2Result train_stage2(const DatasetManifest& data, const AutoencoderSet<float>& stage1,
                          const RunConfig& cfg, const std::string& log_path,
                          const std::atomic<bool>* stop) {
    check_dataset(data, cfg, "train_stage2");
    const ComponentLayout layout = layout_from(cfg);
    const PipelineToggles toggles = ablation_flags_to_pipeline(cfg.flags);
    if (toggles.induced) validate_noise(NoiseConfig{cfg.noise_epsilon, cfg.seed});
    validate_weights(cfg.weights);

    // Deep-copy the stage-1 tensors so fine-tuning never mutates the caller's
    // models through shared nodes.
    Rng scratch(0);
    AutoencoderSet<float> tuned = AutoencoderSet<float>::build(
        layout, 1, encoder_config(cfg), decoder_config(cfg), scratch);
    {
        NamedParams<float> src, dst;
        stage1.params(src, "ae");
        tuned.params(dst, "ae");
        if (src.size() != dst.size())
            throw InvalidInput("train_stage2: stage-1 models do not match the configuration");
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].first != dst[i].first ||
                src[i].second.shape() != dst[i].second.shape())
                throw InvalidInput(concat_msg(
                    "train_stage2: stage-1 tensor '", src[i].first,
                    "' does not match the configuration"));
            dst[i].second.raw_value() = src[i].second.value();
        }
    }

    Rng rng(cfg.seed);
    Rng mrng = rng.fork(1), drng = rng.fork(2), nrng = rng.fork(3), frng = rng.fork(4);
    Rng order = rng.fork(5);

    Stage2Result res;
    res.model = TranslatorModel<float>::build(layout, tuned, mapper_config(cfg),
                                              generator_config(cfg), mrng);
    res.disc = Discriminator<float>(discriminator_config(cfg), drng);
    NoiseSource<float> ns(nrng.next_u64());
    FeatureExtractor<float> fx(3, frng.next_u64());

    NamedParams<float> gp, dp;
    res.model.generator_side_params(gp);
    res.disc.params(dp, "disc");
    Optimizer<float> g_opt(param_tensors(gp), Optimizer<float>::Kind::Adam, cfg.stage2_lr,
                           cfg.stage2_weight_decay);
    Optimizer<float> d_opt(param_tensors(dp), Optimizer<float>::Kind::Adam,
                           cfg.stage2_disc_lr, cfg.stage2_weight_decay);

    PatchStore sketches, photos;
    sketches.c = 1;
    sketches.h = sketches.w = cfg.resolution;
    photos.c = 3;
    photos.h = photos.w = cfg.resolution;
    for (const auto& s : data.samples) {
        sketches.rows.push_back(s.sketch.value());
        photos.rows.push_back(s.photo.value());
    }

    std::ofstream log_out;
    if (!log_path.empty()) {
        log_out.open(log_path, std::ios::binary);
        if (!log_out) throw ConfigError(concat_msg("cannot write log '", log_path, "'"));
        log_out << stage2_log_header(cfg.flags) << '\n';
    }

    const bool cond = cfg.condition_on_sketch;
    const double eps = cfg.noise_epsilon;
    for (long step = 1; step <= cfg.stage2_steps; ++step) {
        if (stop && stop->load()) {
            res.interrupted = true;
            break;
        }
        std::vector<int> bi(static_cast<std::size_t>(cfg.stage2_batch));
        for (auto& i : bi) i = order.uniform_int(0, static_cast<int>(data.size()) - 1);
        auto sketch = sketches.batch(bi);
        auto photo = photos.batch(bi);

        // discriminator step on real photos vs a frozen copy of the fakes;
        // the single generator forward is reused by the generator step below
        auto fake = res.model(sketch);
        d_opt.zero_grad();
        auto fake_const = Tensor<float>::from_data(fake.shape(), fake.value());
        auto d_loss = adversarial_d(squash_scores(res.disc(disc_input(photo, sketch, cond))),
                                    squash_scores(res.disc(disc_input(fake_const, sketch,
                                                                      cond))));
        double dv = d_loss.value()[0];
        if (!std::isfinite(dv))
            throw TrainingDiverged(concat_msg(
                "stage2: non-finite discriminator loss at step ", step));
        backward(d_loss);
        d_opt.step();

        // generator step through the just-updated discriminator; stray
        // gradients into disc tensors are cleared by the next d step
        g_opt.zero_grad();
        LossTerms<float> terms;
        terms.content = content_l1(fake, photo);
        terms.adversarial =
            adversarial_g(squash_scores(res.disc(disc_input(fake, sketch, cond))));
        if (toggles.perceptual) terms.perceptual = perceptual(fake, photo, fx);
        if (toggles.structural) terms.structural = structural_loss(photo, fake);
        Tensor<float> noise;
        if (toggles.induced) {
            noise = ns.draw(fake.shape());
            terms.induced = reduce_mean(abs(sub(perturb(fake, eps, noise), fake)));
        }
        Objective<float> obj;
        try {
            obj = global_objective(terms, cfg.weights, toggles);
        } catch (const TrainingDiverged& e) {
            throw TrainingDiverged(concat_msg("stage2: step ", step, ": ", e.what()));
        }
        backward(obj.total);
        g_opt.step();
        res.steps_run = step;

        if (step == 1 || step % cfg.stage2_log_interval == 0 || step == cfg.stage2_steps) {
            Stage2LogRow row;
            row.step = step;
            row.d_loss = dv;
            row.total = obj.total.value()[0];
            row.content = raw_term(obj, "content");
            row.adversarial = raw_term(obj, "adversarial");
            if (toggles.perceptual) row.perceptual = raw_term(obj, "perceptual");
            if (toggles.structural) row.structural = raw_term(obj, "structural");
            if (toggles.induced) {
                row.induced = raw_term(obj, "induced");
                // Eq-literal induced term only carries gradient where the
                // perturbed copy clamps; log that norm at the image
                auto leaf = Tensor<float>::from_data(fake.shape(), fake.value());
                leaf.set_trainable();
                auto li = reduce_mean(abs(sub(perturb(leaf, eps, noise), leaf)));
                backward(li);
                double norm = 0;
                for (float g : leaf.grad()) norm += static_cast<double>(g) * g;
                row.induced_grad_norm = std::sqrt(norm);
            }
            res.log.push_back(row);
            if (log_out) log_out << stage2_log_row(row, cfg.flags) << '\n' << std::flush;
        }
    }
    return res;
}

Stage2Result train_stage2_from_checkpoint(const DatasetManifest& data,
                                          const std::string& stage1_ckpt, const RunConfig& cfg,
                                          const std::string& log_path,
                                          const std::atomic<bool>* stop) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(stage1_ckpt, ec))
        throw ConfigError(concat_msg("stage-1 checkpoint '", stage1_ckpt, "' not found"));
    return train_stage2(data, load_stage1(cfg, stage1_ckpt), cfg, log_path, stop);
}

AutoencoderSet<float> build_stage1_models(const RunConfig& cfg) {
    Rng rng(cfg.seed);
    return AutoencoderSet<float>::build(layout_from(cfg), 1, encoder_config(cfg),
                                        decoder_config(cfg), rng);
}

AutoencoderSet<float> load_stage1(const RunConfig& cfg, const std::string& ckpt_path) {
    auto models = build_stage1_models(cfg);
    auto np = stage1_named_params(models);
    load_checkpoint(np, ckpt_path);
    return models;
}

NamedParams<float> stage1_named_params(const AutoencoderSet<float>& models) {
    NamedParams<float> np;
    models.params(np, "ae");
    return np;
}

NamedParams<float> stage2_named_params(const TranslatorModel<float>& model,
                                       const Discriminator<float>& disc) {
    NamedParams<float> np;
    model.all_params(np);
    disc.params(np, "disc");
    return np;
}

}  // namespace ca2n
