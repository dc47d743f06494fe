// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#include "ca2n/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace ca2n {

// ------------------------------------------------------------------- codecs

int quantize_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<int>(std::lround(255.0 * static_cast<double>(c)));
}

namespace {

struct PnmParser {
    const std::string& buf;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < buf.size()) {
            char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
                ++pos;
            } else {
                break;
            }
        }
    }

    long parse_int(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') ++pos;
        if (pos == start)
            throw DecodeError(concat_msg("expected ", what, " in header"),
                              static_cast<long>(start));
        long v = 0;
        for (std::size_t i = start; i < pos; ++i) {
            v = v * 10 + (buf[i] - '0');
            if (v > 1000000) throw DecodeError(concat_msg(what, " out of range"),
                                               static_cast<long>(start));
        }
        return v;
    }
};

}  // namespace

Tensor<float> read_image(const std::string& path, int channels) {
    if (channels != 1 && channels != 3)
        throw InvalidInput("read_image: channels must be 1 (PGM) or 3 (PPM)");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(concat_msg("cannot open image file: ", path));
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    const char* expect = channels == 1 ? "P5" : "P6";
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
        throw DecodeError(concat_msg(path, ": not a binary PGM/PPM file (expected magic ",
                                     expect, ")"), 0);
    const std::string magic = buf.substr(0, 2);
    if (magic != expect)
        throw DecodeError(concat_msg(path, ": expected ", expect, " but file magic is ", magic),
                          0);

    PnmParser p{buf, 2};
    const long w = p.parse_int("width");
    const long h = p.parse_int("height");
    const std::size_t maxval_at = [&] {
        p.skip_space_and_comments();
        return p.pos;
    }();
    const long maxval = p.parse_int("maxval");
    if (maxval != 255)
        throw DecodeError(concat_msg(path, ": unsupported maxval ", maxval, " (only 255)"),
                          static_cast<long>(maxval_at));
    if (w <= 0 || h <= 0) throw DecodeError(concat_msg(path, ": empty image ", w, "x", h), 2);
    if (p.pos >= buf.size())
        throw DecodeError(concat_msg(path, ": missing pixel data"), static_cast<long>(buf.size()));
    ++p.pos;  // the single whitespace byte after maxval

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() - p.pos < need)
        throw DecodeError(concat_msg(path, ": truncated pixel data, expected ", need,
                                     " bytes but only ", buf.size() - p.pos, " remain"),
                          static_cast<long>(buf.size()));

    auto img = Tensor<float>::zeros({1, channels, static_cast<int>(h), static_cast<int>(w)});
    const auto* data = reinterpret_cast<const unsigned char*>(buf.data() + p.pos);
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    if (channels == 1) {
        for (std::size_t i = 0; i < plane; ++i)
            img.raw_value()[i] = static_cast<float>(255 - data[i]) / 255.0f;  // strokes -> 1
    } else {
        for (std::size_t i = 0; i < plane; ++i)
            for (int c = 0; c < 3; ++c)
                img.raw_value()[c * plane + i] = static_cast<float>(data[i * 3 + c]) / 255.0f;
    }
    return img;
}

void write_image(const Tensor<float>& image, const std::string& path) {
    const auto& s = image.shape();
    if (s.size() != 4 || s[0] != 1 || (s[1] != 1 && s[1] != 3))
        throw InvalidInput(concat_msg("write_image: expected [1,1,H,W] or [1,3,H,W], got ",
                                      shape_str(s)));
    const int channels = s[1], h = s[2], w = s[3];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(concat_msg("cannot write image file: ", path));
    out << (channels == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << '\n' << "255" << '\n';
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    std::vector<unsigned char> bytes(plane * channels);
    if (channels == 1) {
        for (std::size_t i = 0; i < plane; ++i)
            bytes[i] = static_cast<unsigned char>(255 - quantize_byte(image.value()[i]));
    } else {
        for (std::size_t i = 0; i < plane; ++i)
            for (int c = 0; c < 3; ++c)
                bytes[i * 3 + c] =
                    static_cast<unsigned char>(quantize_byte(image.value()[c * plane + i]));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw ConfigError(concat_msg("error while writing image file: ", path));
}

// ---------------------------------------------------------------- synthesis

namespace {

using Color = std::array<float, 3>;

struct Canvas {
    int s;
    std::vector<float> plane[3];

    explicit Canvas(int size) : s(size) {
        for (auto& p : plane) p.assign(static_cast<std::size_t>(s) * s, 0.0f);
    }

    void fill(const Color& c) {
        for (int ch = 0; ch < 3; ++ch)
            std::fill(plane[ch].begin(), plane[ch].end(), c[ch]);
    }

    void blend(int x, int y, const Color& c, float alpha) {
        const std::size_t i = static_cast<std::size_t>(y) * s + x;
        for (int ch = 0; ch < 3; ++ch) plane[ch][i] += alpha * (c[ch] - plane[ch][i]);
    }

    // filled ellipse with a ~1px soft edge; half: 0 = full, 1 = lower only
    void ellipse(double cx, double cy, double rx, double ry, const Color& c, int half = 0) {
        const int x0 = std::max(0, static_cast<int>(cx - rx - 2));
        const int x1 = std::min(s - 1, static_cast<int>(cx + rx + 2));
        const int y0 = std::max(0, static_cast<int>(cy - ry - 2));
        const int y1 = std::min(s - 1, static_cast<int>(cy + ry + 2));
        for (int y = y0; y <= y1; ++y) {
            if (half == 1 && y < cy) continue;
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                const double d = std::sqrt(dx * dx + dy * dy);
                const double edge = 2.0 / std::min(rx, ry);  // ~two pixels in d units
                const float a = static_cast<float>(std::clamp((1.0 - d) / edge + 0.5, 0.0, 1.0));
                if (a > 0) blend(x, y, c, a);
            }
        }
    }

    // ellipse ring segment (lower half): mouth arc
    void arc_band(double cx, double cy, double rx, double ry, double inner, const Color& c) {
        const int x0 = std::max(0, static_cast<int>(cx - rx - 2));
        const int x1 = std::min(s - 1, static_cast<int>(cx + rx + 2));
        const int y0 = std::max(0, static_cast<int>(cy));
        const int y1 = std::min(s - 1, static_cast<int>(cy + ry + 2));
        const double edge = 2.0 / std::min(rx, ry);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                const double d = std::sqrt(dx * dx + dy * dy);
                const double inside = std::min(1.0 - d, d - inner);
                const float a = static_cast<float>(std::clamp(inside / edge + 0.5, 0.0, 1.0));
                if (a > 0) blend(x, y, c, a);
            }
    }

    void triangle(double ax, double ay, double bx, double by, double tx, double ty,
                  const Color& c) {
        const int x0 = std::max(0, static_cast<int>(std::min({ax, bx, tx})));
        const int x1 = std::min(s - 1, static_cast<int>(std::max({ax, bx, tx})) + 1);
        const int y0 = std::max(0, static_cast<int>(std::min({ay, by, ty})));
        const int y1 = std::min(s - 1, static_cast<int>(std::max({ay, by, ty})) + 1);
        const double area = (bx - ax) * (ty - ay) - (tx - ax) * (by - ay);
        if (area == 0) return;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double w0 = ((bx - ax) * (y - ay) - (x - ax) * (by - ay)) / area;
                const double w1 = ((x - ax) * (ty - ay) - (tx - ax) * (y - ay)) / area;
                if (w0 >= 0 && w1 >= 0 && w0 + w1 <= 1) blend(x, y, c, 1.0f);
            }
    }
};

Color jitter(Rng& r, const Color& base, float amount) {
    Color c;
    for (int i = 0; i < 3; ++i)
        c[i] = std::clamp(base[i] + static_cast<float>(r.uniform(-amount, amount)), 0.0f, 1.0f);
    return c;
}

void draw_eye(Canvas& cv, Rng& r, const SpatialBox& box) {
    // center jittered within the middle half of the box: always strictly inside
    const double cx = box.x + box.w * (0.5 + r.uniform(-0.12, 0.12));
    const double cy = box.y + box.h * (0.5 + r.uniform(-0.1, 0.1));
    const double rx = box.w * r.uniform(0.24, 0.33);
    const double ry = box.h * r.uniform(0.26, 0.38);
    cv.ellipse(cx, cy, rx, ry, jitter(r, {0.95f, 0.95f, 0.97f}, 0.02f));
    static const Color kIris[3] = {{0.35f, 0.22f, 0.12f}, {0.25f, 0.4f, 0.6f}, {0.3f, 0.45f, 0.3f}};
    const Color iris = jitter(r, kIris[r.uniform_int(0, 2)], 0.05f);
    const double ir = std::min(rx, ry) * r.uniform(0.55, 0.75);
    cv.ellipse(cx, cy, ir, ir, iris);
    cv.ellipse(cx, cy, ir * 0.45, ir * 0.45, {0.05f, 0.05f, 0.05f});
}

Tensor<float> quantized_photo(const Canvas& cv) {
    auto t = Tensor<float>::zeros({1, 3, cv.s, cv.s});
    const std::size_t plane = static_cast<std::size_t>(cv.s) * cv.s;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            t.raw_value()[c * plane + i] =
                static_cast<float>(quantize_byte(cv.plane[c][i])) / 255.0f;
    return t;
}

std::vector<float> gaussian_blur(const std::vector<float>& src, int s, double sigma) {
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2 * sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;

    // replicate borders so the frame edge does not register as a stroke
    std::vector<float> tmp(src.size()), out(src.size());
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * src[y * s + std::clamp(x + i, 0, s - 1)];
            tmp[y * s + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * tmp[std::clamp(y + i, 0, s - 1) * s + x];
            out[y * s + x] = static_cast<float>(acc);
        }
    return out;
}

}  // namespace

Tensor<float> sketch_from_photo(const Tensor<float>& photo) {
    const auto& sh = photo.shape();
    if (sh.size() != 4 || sh[0] != 1 || sh[1] != 3 || sh[2] != sh[3])
        throw InvalidInput(concat_msg("sketch_from_photo: expected [1,3,S,S], got ",
                                      shape_str(sh)));
    const int s = sh[2];
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    std::vector<float> gray(plane);
    for (std::size_t i = 0; i < plane; ++i)
        gray[i] = 0.299f * photo.value()[i] + 0.587f * photo.value()[plane + i] +
                  0.114f * photo.value()[2 * plane + i];

    auto g1 = gaussian_blur(gray, s, 1.0);
    auto g2 = gaussian_blur(gray, s, 1.6);
    std::vector<float> resp(plane);
    float peak = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        resp[i] = g1[i] - g2[i];
        peak = std::max(peak, std::fabs(resp[i]));
    }
    auto sk = Tensor<float>::zeros({1, 1, s, s});
    if (peak > 0)
        for (std::size_t i = 0; i < plane; ++i)
            sk.raw_value()[i] = std::fabs(resp[i]) / peak > 0.08f ? 1.0f : 0.0f;
    return sk;
}

DatasetManifest synth_faces(int n, std::uint64_t seed, int resolution) {
    if (n < 1) throw InvalidInput("synth_faces: need at least one sample");
    const auto layout = ComponentLayout::defaults(resolution);
    const double s = resolution;
    const Rng master(seed);

    DatasetManifest m;
    m.resolution = resolution;
    m.provenance = concat_msg("synthetic seed=", seed);
    for (int i = 0; i < n; ++i) {
        Rng r = master.fork(static_cast<std::uint64_t>(i));
        Canvas cv(resolution);
        cv.fill(jitter(r, {0.92f, 0.94f, 0.96f}, 0.04f));

        const Color skin = jitter(r, {0.87f, 0.72f, 0.58f}, 0.06f);
        const double hx = s * (0.5 + r.uniform(-0.01, 0.01));
        const double hy = s * (0.52 + r.uniform(-0.01, 0.01));
        cv.ellipse(hx, hy, s * r.uniform(0.32, 0.36), s * r.uniform(0.42, 0.46), skin);

        draw_eye(cv, r, layout.box(ComponentId::LeftEye));
        draw_eye(cv, r, layout.box(ComponentId::RightEye));

        const auto& nb = layout.box(ComponentId::Nose);
        Color nose_c = {skin[0] * 0.82f, skin[1] * 0.82f, skin[2] * 0.82f};
        if (r.uniform() < 0.5) {
            const double tx = nb.x + nb.w * (0.5 + r.uniform(-0.05, 0.05));
            const double ty = nb.y + nb.h * r.uniform(0.15, 0.3);
            const double base_y = nb.y + nb.h * r.uniform(0.75, 0.9);
            const double half_w = nb.w * r.uniform(0.18, 0.28);
            cv.triangle(tx - half_w, base_y, tx + half_w, base_y, tx, ty, nose_c);
        } else {
            cv.ellipse(nb.x + nb.w * 0.5, nb.y + nb.h * r.uniform(0.55, 0.7),
                       nb.w * r.uniform(0.16, 0.24), nb.h * r.uniform(0.22, 0.32), nose_c);
        }

        const auto& mb = layout.box(ComponentId::Mouth);
        const double mcx = mb.x + mb.w * (0.5 + r.uniform(-0.04, 0.04));
        const double mcy = mb.y + mb.h * r.uniform(0.15, 0.3);
        cv.arc_band(mcx, mcy, mb.w * r.uniform(0.34, 0.44), mb.h * r.uniform(0.5, 0.65),
                    r.uniform(0.52, 0.66), jitter(r, {0.65f, 0.28f, 0.28f}, 0.06f));

        PairedSample sample;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "%04d", i);
        sample.id = idbuf;
        sample.photo = quantized_photo(cv);
        sample.sketch = sketch_from_photo(sample.photo);
        m.samples.push_back(std::move(sample));
    }
    return m;
}

// ------------------------------------------------------------------ storage

void write_dataset(const DatasetManifest& m, const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& s : m.samples) {
        write_image(s.sketch, (fs::path(dir) / (s.id + "_sketch.pgm")).string());
        write_image(s.photo, (fs::path(dir) / (s.id + "_photo.ppm")).string());
    }
}

DatasetManifest load_dataset(const std::string& dir, int resolution) {
    if (!fs::is_directory(dir)) throw ConfigError(concat_msg("dataset directory missing: ", dir));
    std::map<std::string, std::pair<bool, bool>> stems;  // id -> (sketch, photo)
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        entries.push_back(name);
        if (name.size() > 11 && name.ends_with("_sketch.pgm"))
            stems[name.substr(0, name.size() - 11)].first = true;
        else if (name.size() > 10 && name.ends_with("_photo.ppm"))
            stems[name.substr(0, name.size() - 10)].second = true;
    }

    DatasetManifest m;
    m.resolution = resolution;
    m.provenance = dir;
    for (const auto& [id, have] : stems) {  // std::map iterates lexicographically
        if (!have.first || !have.second) {
            m.warnings.push_back(concat_msg("orphan file skipped: ", id,
                                            have.first ? "_sketch.pgm" : "_photo.ppm"));
            continue;
        }
        try {
            PairedSample s;
            s.id = id;
            s.sketch = read_image((fs::path(dir) / (id + "_sketch.pgm")).string(), 1);
            s.photo = read_image((fs::path(dir) / (id + "_photo.ppm")).string(), 3);
            for (const auto* img : {&s.sketch, &s.photo})
                if (img->shape()[2] != resolution || img->shape()[3] != resolution)
                    throw DecodeError(concat_msg(id, ": expected ", resolution, "x", resolution,
                                                 ", got ", img->shape()[3], "x", img->shape()[2]),
                                      0);
            m.samples.push_back(std::move(s));
        } catch (const DecodeError& err) {
            m.warnings.push_back(concat_msg("pair '", id, "' skipped: ", err.what()));
        }
    }
    if (m.samples.empty()) {
        std::sort(entries.begin(), entries.end());
        std::string listing;
        for (std::size_t i = 0; i < entries.size() && i < 8; ++i)
            listing += (i ? ", " : "") + entries[i];
        if (entries.size() > 8) listing += ", ...";
        throw ConfigError(concat_msg("no usable sketch/photo pairs in ", dir, " (",
                                     entries.size(), " entries: ", listing, ")"));
    }
    return m;
}

// -------------------------------------------------------------------- split

std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& m,
                                                             int train_part, int test_part,
                                                             std::uint64_t seed) {
    if (train_part < 1 || test_part < 1)
        throw InvalidInput("split_train_test: ratio parts must be positive integers");
    if (m.empty()) throw InvalidInput("split_train_test: empty manifest");

    const std::size_t total = m.size();
    const std::size_t groups = total / static_cast<std::size_t>(train_part + test_part);
    const std::size_t test_n = groups * static_cast<std::size_t>(test_part);

    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = total - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(0, static_cast<int>(i))]);

    DatasetManifest train, test;
    train.resolution = test.resolution = m.resolution;
    train.provenance = m.provenance + " (train split)";
    test.provenance = m.provenance + " (test split)";
    for (std::size_t i = 0; i < total; ++i)
        (i < test_n ? test : train).samples.push_back(m.samples[idx[i]]);
    auto by_id = [](const PairedSample& a, const PairedSample& b) { return a.id < b.id; };
    std::sort(train.samples.begin(), train.samples.end(), by_id);
    std::sort(test.samples.begin(), test.samples.end(), by_id);
    if (test.empty()) {
        const auto warning = concat_msg("test split is empty: ", total, " samples < ratio total ",
                                        train_part + test_part);
        train.warnings.push_back(warning);
        test.warnings.push_back(warning);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace ca2n
