// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0

#include "ca2n/infer.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "ca2n/dataio.hpp"

namespace ca2n {

namespace {

// separable gaussian blur with replicate borders, one [H,W] plane
void blur_plane(std::vector<float>& plane, int h, int w, double sigma) {
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> win(2 * r + 1);
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        win[i + r] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        sum += win[i + r];
    }
    for (double& v : win) v /= sum;

    std::vector<float> tmp(plane.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i)
                acc += win[i + r] * plane[y * w + std::clamp(x + i, 0, w - 1)];
            tmp[y * w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i)
                acc += win[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
            plane[y * w + x] = static_cast<float>(acc);
        }
}

Tensor<float> unsharp(const Tensor<float>& image, double amount, double sigma) {
    const auto& s = image.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    std::vector<float> out = image.value();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n * c; ++i) {
        std::vector<float> p(out.begin() + i * plane, out.begin() + (i + 1) * plane);
        blur_plane(p, h, w, sigma);
        for (std::size_t j = 0; j < plane; ++j) {
            double v = out[i * plane + j] +
                       amount * (out[i * plane + j] - static_cast<double>(p[j]));
            out[i * plane + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return Tensor<float>::from_data(s, std::move(out));
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char ch : s)
        out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
    return out + "'";
}

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (s.size() > 2000) s = s.substr(0, 2000) + "...";
    return s;
}

Tensor<float> run_command_hook(const Tensor<float>& image, const EnhancementHook& hook) {
    static std::atomic<long> counter{0};
    const auto& s = image.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const std::size_t frame = static_cast<std::size_t>(c) * h * w;

    namespace fs = std::filesystem;
    std::string tag = concat_msg("ca2n_hook_", ::getpid(), "_", counter.fetch_add(1));
    fs::path dir = fs::temp_directory_path();
    fs::path in_p = dir / (tag + "_in.ppm");
    fs::path out_p = dir / (tag + "_out.ppm");
    fs::path err_p = dir / (tag + "_err.txt");
    auto cleanup = [&] {
        std::error_code ec;
        fs::remove(in_p, ec);
        fs::remove(out_p, ec);
        fs::remove(err_p, ec);
    };

    std::vector<float> out(image.value().size());
    for (int i = 0; i < n; ++i) {
        std::vector<float> one(image.value().begin() + i * frame,
                               image.value().begin() + (i + 1) * frame);
        write_image(Tensor<float>::from_data({1, c, h, w}, std::move(one)), in_p.string());
        std::string cmd = shell_quote(hook.command) + " " + shell_quote(in_p.string()) + " " +
                          shell_quote(out_p.string()) + " 2>" + shell_quote(err_p.string());
        int rc = std::system(cmd.c_str());
        std::string diag = read_all(err_p.string());
        if (rc == -1) {
            cleanup();
            throw EnhancementError(concat_msg("hook command could not be launched: ",
                                              hook.command));
        }
        if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) {
            int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
            cleanup();
            throw EnhancementError(concat_msg("hook command '", hook.command,
                                              "' exited with status ", code,
                                              diag.empty() ? "" : "; stderr: ", diag));
        }
        Tensor<float> result;
        try {
            result = read_image(out_p.string(), c);
        } catch (const std::exception& e) {
            cleanup();
            throw EnhancementError(concat_msg("hook command '", hook.command,
                                              "' produced an unreadable image: ", e.what()));
        }
        if (result.shape() != Shape{1, c, h, w}) {
            auto got = shape_str(result.shape());
            cleanup();
            throw EnhancementError(concat_msg("hook command '", hook.command,
                                              "' changed the image shape to ", got));
        }
        std::copy(result.value().begin(), result.value().end(), out.begin() + i * frame);
    }
    cleanup();
    return Tensor<float>::from_data(s, std::move(out));
}

}  // namespace

EnhancementHook parse_hook(const std::string& desc) {
    EnhancementHook hook;
    if (desc == "identity") return hook;
    if (desc.rfind("command:", 0) == 0) {
        hook.mode = EnhancementHook::Mode::Command;
        hook.command = desc.substr(8);
        if (hook.command.empty())
            throw ConfigError("hook 'command:' needs a path, e.g. command:/usr/bin/enhance");
        return hook;
    }
    if (desc.rfind("unsharp", 0) == 0) {
        hook.mode = EnhancementHook::Mode::Unsharp;
        if (desc.size() > 7) {
            if (desc[7] != ':')
                throw ConfigError(concat_msg("bad hook spec '", desc, "'"));
            double amount = 0, radius = 0;
            if (std::sscanf(desc.c_str() + 8, "%lf,%lf", &amount, &radius) != 2)
                throw ConfigError(concat_msg("bad unsharp spec '", desc,
                                             "', expected unsharp:<amount>,<radius>"));
            hook.amount = amount;
            hook.radius = radius;
        }
        if (hook.amount < 0 || hook.radius <= 0)
            throw ConfigError("unsharp amount must be >= 0 and radius positive");
        return hook;
    }
    throw ConfigError(concat_msg("unknown hook '", desc,
                                 "'; expected identity, unsharp:<amount>,<radius> or "
                                 "command:<path>"));
}

EnhancementHook hook_from_config(const RunConfig& cfg) {
    EnhancementHook hook;
    if (cfg.hook.mode == "unsharp") {
        hook.mode = EnhancementHook::Mode::Unsharp;
        hook.amount = cfg.hook.amount;
        hook.radius = cfg.hook.radius;
    } else if (cfg.hook.mode == "command") {
        hook.mode = EnhancementHook::Mode::Command;
        hook.command = cfg.hook.command;
    }
    return hook;
}

Tensor<float> apply_hook(const Tensor<float>& image, const EnhancementHook& hook) {
    if (image.rank() != 4)
        throw InvalidInput(concat_msg("apply_hook: expected [N,C,H,W], got ",
                                      shape_str(image.shape())));
    switch (hook.mode) {
        case EnhancementHook::Mode::Identity:
            return image;
        case EnhancementHook::Mode::Unsharp:
            if (hook.amount == 0) return image;
            return unsharp(image, hook.amount, hook.radius);
        case EnhancementHook::Mode::Command:
            return run_command_hook(image, hook);
    }
    throw InvalidInput("apply_hook: unknown mode");
}

Tensor<float> infer_image(const TranslatorModel<float>& model, const Tensor<float>& sketch,
                          const EnhancementHook& hook) {
    return apply_hook(model(sketch), hook);
}

}  // namespace ca2n
