// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Black-box tests of the command-line binary. The executable path comes from
// the CA2N_BIN environment variable so the suite works from any build layout.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ca2n/dataio.hpp"

using namespace ca2n;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string ca2n_bin() {
    const char* env = std::getenv("CA2N_BIN");
    std::string bin = env ? env : "./ca2n";
    REQUIRE_MESSAGE(fs::exists(bin), "set CA2N_BIN to the ca2n executable path");
    return bin;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

struct RunResult {
    int code = -1;
    std::string out, err;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    TmpDir io("ca2n_cli_io_" + std::to_string(counter++));
    std::string o = io.file("out"), e = io.file("err");
    std::string cmd = ca2n_bin() + " " + args + " >" + o + " 2>" + e;
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

// Desk-size plans so the pipeline test finishes quickly.
std::string tiny_config_text(const TmpDir& dir) {
    std::ostringstream cfg;
    cfg << "resolution = 32\n"
        << "latent = 16\n"
        << "seed = 21\n"
        << "data_dir = " << dir.file("data") << "\n"
        << "checkpoint_dir = " << dir.file("ckpt") << "\n"
        << "report_dir = " << dir.file("reports") << "\n"
        << "model.encoder_channels = 8,8,16,16,16\n"
        << "model.decoder_channels = 16,16,8,8\n"
        << "model.mapper_channels = 16,16,16,16\n"
        << "model.generator_down = 8,16,16\n"
        << "model.generator_residual = 1\n"
        << "model.generator_up = 16,8,8\n"
        << "model.discriminator_channels = 8,16,16,32\n"
        << "cbam.reduction = 4\n"
        << "stage1.epochs = 2\n"
        << "stage1.batch = 4\n"
        << "stage2.steps = 6\n"
        << "stage2.batch = 2\n"
        << "stage2.log_interval = 5\n";
    return cfg.str();
}

}  // namespace

TEST_CASE("usage problems exit with code 2 and one error line") {
    auto none = run_cli("");
    CHECK(none.code == 2);
    CHECK(contains(none.err, "error: usage:"));
    CHECK(lines_of(none.err).size() == 1);

    CHECK(run_cli("synth-data --n 4 --seed 1 --size 32").code == 2);  // missing --out
    CHECK(run_cli("synth-data --wat 3").code == 2);
    CHECK(run_cli("no-such-command").code == 2);
    CHECK(run_cli("eval --ckpt a --data b --report c --split bogus").code == 2);

    auto help = run_cli("--help");
    CHECK(help.code == 0);
    CHECK(contains(help.out, "synth-data"));
    CHECK(contains(help.out, "train-stage1"));
}

TEST_CASE("runtime failures exit with code 1 and a categorized line") {
    TmpDir dir("ca2n_cli_errors");

    auto bad_seed = run_cli("synth-data --n 2 --seed banana --size 32 --out " + dir.file("d"));
    CHECK(bad_seed.code == 1);
    CHECK(contains(bad_seed.err, "error: config:"));
    CHECK(lines_of(bad_seed.err).size() == 1);

    auto no_cfg = run_cli("train-stage1 --config " + dir.file("missing.cfg"));
    CHECK(no_cfg.code == 1);
    CHECK(contains(no_cfg.err, "error: config:"));

    spit(dir.file("no_seed.cfg"), "resolution = 32\n");
    auto no_seed = run_cli("train-stage1 --config " + dir.file("no_seed.cfg"));
    CHECK(no_seed.code == 1);
    CHECK(contains(no_seed.err, "error: config:"));
    CHECK(contains(no_seed.err, "seed"));

    auto bad_ckpt = run_cli("infer --ckpt " + dir.file("none.ckpt") + " --sketch a --out b");
    CHECK(bad_ckpt.code == 1);
    CHECK(contains(bad_ckpt.err, "error: checkpoint:"));
}

TEST_CASE("synth-data writes a deterministic loadable dataset") {
    TmpDir dir("ca2n_cli_synth");
    auto r = run_cli("synth-data --n 6 --seed 5 --size 32 --out " + dir.file("a"));
    CHECK(r.code == 0);
    CHECK(contains(r.out, "wrote 6 pairs at 32x32"));

    auto data = load_dataset(dir.file("a"), 32);
    REQUIRE(data.size() == 6);
    CHECK(data.samples[0].sketch.shape() == Shape{1, 1, 32, 32});
    CHECK(data.samples[0].photo.shape() == Shape{1, 3, 32, 32});

    CHECK(run_cli("synth-data --n 6 --seed 5 --size 32 --out " + dir.file("b")).code == 0);
    CHECK(run_cli("synth-data --n 6 --seed 6 --size 32 --out " + dir.file("c")).code == 0);
    auto first_sketch = [&](const std::string& sub) {
        for (const auto& e : fs::directory_iterator(dir.file(sub)))
            if (e.path().string().ends_with("_sketch.pgm")) return slurp(e.path().string());
        return std::string();
    };
    CHECK(first_sketch("a") == first_sketch("b"));
    CHECK(first_sketch("a") != first_sketch("c"));
}

TEST_CASE("gradcheck runs standalone and per op") {
    auto relu = run_cli("gradcheck --op relu --instances 5");
    CHECK(relu.code == 0);
    CHECK(contains(relu.out, "PASS relu"));
    CHECK(!contains(relu.out, "FAIL"));

    auto unknown = run_cli("gradcheck --op warp_drive");
    CHECK(unknown.code == 1);
    CHECK(contains(unknown.err, "error: invalid-input:"));
    CHECK(contains(unknown.err, "available:"));
}

TEST_CASE("the training pipeline runs end to end through the binary") {
    TmpDir dir("ca2n_cli_pipeline");
    spit(dir.file("run.cfg"), tiny_config_text(dir));

    REQUIRE(run_cli("synth-data --n 11 --seed 5 --size 32 --out " + dir.file("data")).code == 0);

    auto s1 = run_cli("train-stage1 --config " + dir.file("run.cfg"));
    CHECK(s1.code == 0);
    CHECK(contains(s1.out, "stage1:"));
    CHECK(contains(s1.out, "10 pairs"));  // the held-out test pair is untouched
    REQUIRE(fs::exists(dir.file("ckpt") + "/stage1.ckpt"));
    CHECK(fs::exists(dir.file("reports") + "/stage1_log.csv"));

    // the same config reproduces the checkpoint bitwise
    auto again = run_cli("train-stage1 --config " + dir.file("run.cfg") +
                         " --set checkpoint_dir=" + dir.file("ckpt2"));
    CHECK(again.code == 0);
    CHECK(slurp(dir.file("ckpt") + "/stage1.ckpt") == slurp(dir.file("ckpt2") + "/stage1.ckpt"));

    auto s2 = run_cli("train-stage2 --config " + dir.file("run.cfg") + " --stage1-ckpt " +
                      dir.file("ckpt") + "/stage1.ckpt");
    CHECK(s2.code == 0);
    CHECK(contains(s2.out, "stage2:"));
    REQUIRE(fs::exists(dir.file("ckpt") + "/stage2.ckpt"));
    auto log = slurp(dir.file("reports") + "/stage2_log.csv");
    CHECK(contains(lines_of(log)[0], "step,d_loss,total,content,adversarial"));

    std::string sketch;
    for (const auto& e : fs::directory_iterator(dir.file("data")))
        if (e.path().string().ends_with("_sketch.pgm")) sketch = e.path().string();
    REQUIRE(!sketch.empty());

    auto inf = run_cli("infer --config " + dir.file("run.cfg") + " --ckpt " + dir.file("ckpt") +
                       "/stage2.ckpt --sketch " + sketch + " --out " + dir.file("out.ppm"));
    CHECK(inf.code == 0);
    auto img = read_image(dir.file("out.ppm"), 3);
    CHECK(img.shape() == Shape{1, 3, 32, 32});

    // unsharp post-processing changes the bytes, identity does not
    auto inf2 = run_cli("infer --config " + dir.file("run.cfg") + " --ckpt " + dir.file("ckpt") +
                        "/stage2.ckpt --sketch " + sketch + " --out " + dir.file("out2.ppm") +
                        " --hook unsharp:1.5,1.0");
    CHECK(inf2.code == 0);
    CHECK(slurp(dir.file("out2.ppm")) != slurp(dir.file("out.ppm")));

    // the stage-1 checkpoint cannot stand in for a stage-2 one
    auto wrong = run_cli("infer --config " + dir.file("run.cfg") + " --ckpt " + dir.file("ckpt") +
                         "/stage1.ckpt --sketch " + sketch + " --out " + dir.file("bad.ppm"));
    CHECK(wrong.code == 1);
    CHECK(contains(wrong.err, "error: checkpoint:"));

    auto ev = run_cli("eval --config " + dir.file("run.cfg") + " --ckpt " + dir.file("ckpt") +
                      "/stage2.ckpt --data " + dir.file("data") + " --report " +
                      dir.file("report.csv") + " --split test");
    CHECK(ev.code == 0);
    CHECK(contains(ev.out, "eval: 1 pairs"));
    auto report = lines_of(slurp(dir.file("report.csv")));
    REQUIRE(report.size() >= 2);
    CHECK(contains(report[0], "ssim"));

    // a sketch at the wrong resolution is rejected up front
    REQUIRE(run_cli("synth-data --n 1 --seed 9 --size 64 --out " + dir.file("big")).code == 0);
    std::string big_sketch;
    for (const auto& e : fs::directory_iterator(dir.file("big")))
        if (e.path().string().ends_with("_sketch.pgm")) big_sketch = e.path().string();
    auto mismatch = run_cli("infer --config " + dir.file("run.cfg") + " --ckpt " +
                            dir.file("ckpt") + "/stage2.ckpt --sketch " + big_sketch + " --out " +
                            dir.file("nope.ppm"));
    CHECK(mismatch.code == 1);
    CHECK(contains(mismatch.err, "error: invalid-input:"));
}
