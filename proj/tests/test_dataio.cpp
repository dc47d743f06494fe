// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ca2n/dataio.hpp"

using namespace ca2n;
using TF = Tensor<float>;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("quantization rule and codec round trip") {
    CHECK(quantize_byte(1.0f) == 255);
    CHECK(quantize_byte(0.5f) == 128);  // half rounds away from zero
    CHECK(quantize_byte(0.0f) == 0);
    CHECK(quantize_byte(-0.3f) == 0);
    CHECK(quantize_byte(2.0f) == 255);

    TmpDir dir("ca2n_codec_test");
    Rng rng(301);
    auto photo = rand_uniform<float>({1, 3, 7, 5}, rng, 0, 1);
    write_image(photo, dir.file("a_photo.ppm"));
    auto back = read_image(dir.file("a_photo.ppm"), 3);
    REQUIRE(back.shape() == photo.shape());
    for (std::size_t i = 0; i < photo.numel(); ++i)
        CHECK(back.value()[i] == static_cast<float>(quantize_byte(photo.value()[i])) / 255.0f);

    // write(read(x)) byte-identical
    write_image(back, dir.file("b_photo.ppm"));
    CHECK(slurp(dir.file("a_photo.ppm")) == slurp(dir.file("b_photo.ppm")));

    auto sketch = TF::zeros({1, 1, 3, 3});
    sketch.raw_value()[4] = 1.0f;
    write_image(sketch, dir.file("s_sketch.pgm"));
    auto sk = read_image(dir.file("s_sketch.pgm"), 1);
    CHECK(sk.value() == sketch.value());
    write_image(sk, dir.file("t_sketch.pgm"));
    CHECK(slurp(dir.file("s_sketch.pgm")) == slurp(dir.file("t_sketch.pgm")));
}

TEST_CASE("pgm stores strokes inverted, ppm stores values directly") {
    TmpDir dir("ca2n_polarity_test");
    auto sketch = TF::zeros({1, 1, 1, 2});
    sketch.raw_value()[0] = 1.0f;  // stroke
    write_image(sketch, dir.file("x_sketch.pgm"));
    std::string pgm = slurp(dir.file("x_sketch.pgm"));
    REQUIRE(pgm.size() >= 2);
    CHECK(static_cast<unsigned char>(pgm[pgm.size() - 2]) == 0);    // stroke -> dark
    CHECK(static_cast<unsigned char>(pgm[pgm.size() - 1]) == 255);  // background -> white

    auto photo = TF::filled({1, 3, 1, 1}, 0.5f);
    photo.raw_value()[0] = 1.0f;
    write_image(photo, dir.file("x_photo.ppm"));
    std::string ppm = slurp(dir.file("x_photo.ppm"));
    REQUIRE(ppm.size() >= 3);
    CHECK(static_cast<unsigned char>(ppm[ppm.size() - 3]) == 255);
    CHECK(static_cast<unsigned char>(ppm[ppm.size() - 2]) == 128);
    CHECK(static_cast<unsigned char>(ppm[ppm.size() - 1]) == 128);
}

TEST_CASE("decoder rejects malformed files with byte offsets") {
    TmpDir dir("ca2n_decode_test");
    auto photo = TF::filled({1, 3, 2, 2}, 0.5f);
    write_image(photo, dir.file("ok_photo.ppm"));

    // P6 data presented where a sketch (P5) is expected: error names the magic
    CHECK_THROWS_WITH_AS(read_image(dir.file("ok_photo.ppm"), 1),
                         doctest::Contains("P6"), DecodeError);

    auto write_raw = [&dir](const std::string& name, const std::string& bytes) {
        std::ofstream out(dir.file(name), std::ios::binary);
        out << bytes;
    };
    write_raw("bad_magic.pgm", "Q5\n2 2\n255\n    ");
    CHECK_THROWS_AS(read_image(dir.file("bad_magic.pgm"), 1), DecodeError);

    write_raw("bad_maxval.pgm", "P5\n2 2\n254\n    ");
    try {
        read_image(dir.file("bad_maxval.pgm"), 1);
        FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
        CHECK(std::string(e.what()).find("254") != std::string::npos);
        CHECK(e.offset == 7);
    }

    write_raw("truncated.pgm", "P5\n4 4\n255\nxx");
    try {
        read_image(dir.file("truncated.pgm"), 1);
        FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    write_raw("no_number.pgm", "P5\nab\n255\n");
    CHECK_THROWS_AS(read_image(dir.file("no_number.pgm"), 1), DecodeError);

    // header comments are legal netpbm
    write_raw("comment.pgm", "P5\n# a comment\n1 1\n255\n\x40");
    auto img = read_image(dir.file("comment.pgm"), 1);
    CHECK(img.shape() == Shape{1, 1, 1, 1});

    CHECK_THROWS_AS(read_image(dir.file("missing.pgm"), 1), ConfigError);
    CHECK_THROWS_AS(read_image(dir.file("ok_photo.ppm"), 2), InvalidInput);
}

TEST_CASE("synthetic faces are deterministic with landmarks in their boxes") {
    auto a = synth_faces(3, 42, 64);
    auto b = synth_faces(3, 42, 64);
    REQUIRE(a.size() == 3);
    CHECK(a.resolution == 64);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.samples[i].id == b.samples[i].id);
        CHECK(a.samples[i].photo.value() == b.samples[i].photo.value());
        CHECK(a.samples[i].sketch.value() == b.samples[i].sketch.value());
    }
    CHECK(synth_faces(3, 43, 64).samples[0].photo.value() != a.samples[0].photo.value());
    CHECK(a.samples[0].id == "0000");
    CHECK(a.samples[2].id == "0002");

    const auto layout = ComponentLayout::defaults(64);
    for (int seed = 0; seed < 20; ++seed) {
        auto m = synth_faces(1, seed, 64);
        const auto& photo = m.samples[0].photo;
        const std::size_t plane = 64 * 64;
        auto lum = [&photo, plane](int x, int y) {
            const std::size_t i = static_cast<std::size_t>(y) * 64 + x;
            return 0.299f * photo.value()[i] + 0.587f * photo.value()[plane + i] +
                   0.114f * photo.value()[2 * plane + i];
        };
        for (ComponentId eye : {ComponentId::LeftEye, ComponentId::RightEye}) {
            const auto& bx = layout.box(eye);
            float darkest = 1.0f;
            for (int y = bx.y; y < bx.y + bx.h; ++y)
                for (int x = bx.x; x < bx.x + bx.w; ++x) darkest = std::min(darkest, lum(x, y));
            CHECK(darkest < 0.2f);  // the pupil sits inside the eye box
        }
        const auto& mb = layout.box(ComponentId::Mouth);
        float most_red = 0.0f;
        for (int y = mb.y; y < mb.y + mb.h; ++y)
            for (int x = mb.x; x < mb.x + mb.w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * 64 + x;
                most_red = std::max(most_red, photo.value()[i] - photo.value()[plane + i]);
            }
        CHECK(most_red > 0.2f);  // the mouth band sits inside the mouth box
    }
}

TEST_CASE("sketches are binary with stroke density in range at 64x64") {
    double lo = 1.0, hi = 0.0;
    for (int seed = 0; seed < 200; ++seed) {
        auto m = synth_faces(1, static_cast<std::uint64_t>(seed), 64);
        const auto& sk = m.samples[0].sketch;
        double strokes = 0;
        for (float v : sk.value()) {
            CHECK((v == 0.0f || v == 1.0f));
            strokes += v > 0.5f;
        }
        const double density = strokes / static_cast<double>(sk.numel());
        lo = std::min(lo, density);
        hi = std::max(hi, density);
    }
    CHECK(lo >= 0.01);
    CHECK(hi <= 0.25);
}

TEST_CASE("dataset write/load round trip preserves the manifest") {
    TmpDir dir("ca2n_roundtrip_test");
    auto m = synth_faces(5, 7, 32);
    write_dataset(m, dir.path.string());
    auto loaded = load_dataset(dir.path.string(), 32);
    REQUIRE(loaded.size() == m.size());
    CHECK(loaded.resolution == 32);
    CHECK(loaded.warnings.empty());
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(loaded.samples[i].id == m.samples[i].id);
        CHECK(loaded.samples[i].photo.value() == m.samples[i].photo.value());
        CHECK(loaded.samples[i].sketch.value() == m.samples[i].sketch.value());
    }
}

TEST_CASE("loader skips orphans and wrong resolutions but keeps the rest") {
    TmpDir dir("ca2n_loader_test");
    write_dataset(synth_faces(3, 1, 32), dir.path.string());

    auto orphan = TF::zeros({1, 1, 32, 32});
    write_image(orphan, dir.file("zzzz_sketch.pgm"));

    auto wrong = synth_faces(1, 2, 64);
    write_image(wrong.samples[0].sketch, dir.file("wide_sketch.pgm"));
    write_image(wrong.samples[0].photo, dir.file("wide_photo.ppm"));

    auto m = load_dataset(dir.path.string(), 32);
    CHECK(m.size() == 3);
    REQUIRE(m.warnings.size() == 2);
    bool orphan_named = false, wrong_named = false;
    for (const auto& w : m.warnings) {
        if (w.find("zzzz") != std::string::npos) orphan_named = true;
        if (w.find("wide") != std::string::npos) wrong_named = true;
    }
    CHECK(orphan_named);
    CHECK(wrong_named);

    // ids listed lexicographically regardless of directory enumeration order
    for (std::size_t i = 1; i < m.size(); ++i) CHECK(m.samples[i - 1].id < m.samples[i].id);
}

TEST_CASE("loader reports empty directories with a contents summary") {
    TmpDir dir("ca2n_empty_test");
    std::ofstream(dir.file("readme.txt")) << "nothing";
    CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), 32),
                         doctest::Contains("readme.txt"), ConfigError);
    CHECK_THROWS_AS(load_dataset((dir.path / "nope").string(), 32), ConfigError);
}

TEST_CASE("train/test split arithmetic and determinism") {
    auto manifest_of = [](int n) {
        DatasetManifest m;
        m.resolution = 32;
        for (int i = 0; i < n; ++i) {
            PairedSample s;
            char buf[16];
            std::snprintf(buf, sizeof buf, "%04d", i);
            s.id = buf;
            m.samples.push_back(s);
        }
        return m;
    };

    auto [tr11, te11] = split_train_test(manifest_of(11), 10, 1, 5);
    CHECK(tr11.size() == 10);
    CHECK(te11.size() == 1);

    auto [tr220, te220] = split_train_test(manifest_of(220), 10, 1, 5);
    CHECK(tr220.size() == 200);
    CHECK(te220.size() == 20);

    // partition: disjoint, exhaustive, lexicographically ordered
    std::set<std::string> seen;
    for (const auto& s : tr220.samples) CHECK(seen.insert(s.id).second);
    for (const auto& s : te220.samples) CHECK(seen.insert(s.id).second);
    CHECK(seen.size() == 220);
    for (std::size_t i = 1; i < te220.size(); ++i)
        CHECK(te220.samples[i - 1].id < te220.samples[i].id);

    auto [tr_b, te_b] = split_train_test(manifest_of(220), 10, 1, 5);
    for (std::size_t i = 0; i < te220.size(); ++i) CHECK(te_b.samples[i].id == te220.samples[i].id);

    auto [tr_c, te_c] = split_train_test(manifest_of(220), 10, 1, 6);
    CHECK(te_c.size() == 20);
    bool differs = false;
    for (std::size_t i = 0; i < te220.size(); ++i)
        if (te_c.samples[i].id != te220.samples[i].id) differs = true;
    CHECK(differs);

    auto [tr5, te5] = split_train_test(manifest_of(5), 10, 1, 5);
    CHECK(tr5.size() == 5);
    CHECK(te5.size() == 0);
    REQUIRE_FALSE(tr5.warnings.empty());
    CHECK(tr5.warnings[0].find("empty") != std::string::npos);

    CHECK_THROWS_AS(split_train_test(manifest_of(5), 0, 1, 5), InvalidInput);
    CHECK_THROWS_AS(split_train_test(DatasetManifest{}, 10, 1, 5), InvalidInput);
}
