// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#include "ca2n/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ca2n {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (buf.size() - pos < n)
            throw CheckpointError(concat_msg(path, ": truncated checkpoint at byte ", pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<unsigned char>(buf[pos]) |
                          (static_cast<unsigned char>(buf[pos + 1]) << 8) |
                          (static_cast<unsigned char>(buf[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + 3]))
                           << 24);
        pos += 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_verified(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(concat_msg("cannot open checkpoint: ", path));
    std::stringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();
    if (buf.size() < 12 || buf.compare(0, 4, "CA2N") != 0)
        throw CheckpointError(concat_msg(path, ": not a checkpoint file (bad magic)"));
    const std::size_t body = buf.size() - 4;
    Reader tail{buf, body, path};
    const std::uint32_t stored = tail.u32();
    const auto computed = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
    if (stored != computed)
        throw CheckpointError(concat_msg(path, ": CRC mismatch (stored ", stored, ", computed ",
                                         computed, ")"));
    buf.resize(body);
    return buf;
}

struct Record {
    Shape shape;
    std::vector<float> data;
};

std::map<std::string, Record> parse(const std::string& buf, const std::string& path) {
    Reader r{buf, 4, path};
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(concat_msg(path, ": unsupported checkpoint version ", version,
                                         " (expected ", kCheckpointVersion, ")"));
    const std::uint32_t count = r.u32();
    std::map<std::string, Record> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = r.u32();
        if (name_len == 0 || name_len > 4096)
            throw CheckpointError(concat_msg(path, ": implausible tensor name length ", name_len));
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw CheckpointError(concat_msg(path, ": implausible rank ", rank,
                                                       " for tensor ", name));
        Record rec;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32();
            rec.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        rec.data.resize(numel);
        r.need(numel * 4);
        for (auto& v : rec.data) v = r.f32();
        if (!out.emplace(name, std::move(rec)).second)
            throw CheckpointError(concat_msg(path, ": duplicate tensor name ", name));
    }
    if (r.pos != buf.size())
        throw CheckpointError(concat_msg(path, ": ", buf.size() - r.pos,
                                         " unexpected trailing bytes"));
    return out;
}

}  // namespace

void save_checkpoint(const NamedParams<float>& params, const std::string& path) {
    std::set<std::string> names;
    for (const auto& [name, t] : params) {
        if (!t.defined())
            throw CheckpointError(concat_msg("save_checkpoint: tensor '", name, "' is empty"));
        if (!names.insert(name).second)
            throw CheckpointError(concat_msg("save_checkpoint: duplicate tensor name ", name));
    }
    std::string out;
    out += "CA2N";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.value()) put_f32(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(
                     crc32(0L, reinterpret_cast<const Bytef*>(out.data()),
                           static_cast<uInt>(out.size()))));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(concat_msg("cannot write checkpoint: ", path));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f.good()) throw CheckpointError(concat_msg("error while writing checkpoint: ", path));
}

void load_checkpoint(NamedParams<float>& params, const std::string& path) {
    const std::string buf = read_verified(path);
    auto records = parse(buf, path);

    std::vector<std::string> missing, extra;
    std::set<std::string> model_names;
    for (const auto& [name, t] : params) model_names.insert(name);
    for (const auto& [name, t] : params)
        if (!records.count(name)) missing.push_back(name);
    for (const auto& [name, rec] : records)
        if (!model_names.count(name)) extra.push_back(name);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = concat_msg(path, ": tensor set does not match the model.");
        if (!missing.empty()) {
            msg += " Missing from file:";
            for (const auto& n : missing) msg += " " + n;
            msg += ".";
        }
        if (!extra.empty()) {
            msg += " Extra in file:";
            for (const auto& n : extra) msg += " " + n;
            msg += ".";
        }
        throw CheckpointError(msg);
    }
    for (auto& [name, t] : params) {
        const auto& rec = records.at(name);
        if (rec.shape != t.shape())
            throw CheckpointError(concat_msg(path, ": tensor ", name, " has shape ",
                                             shape_str(rec.shape), " but the model expects ",
                                             shape_str(t.shape())));
        std::copy(rec.data.begin(), rec.data.end(), t.raw_value().begin());
    }
}

std::vector<std::pair<std::string, Shape>> peek_checkpoint(const std::string& path) {
    const std::string buf = read_verified(path);
    auto records = parse(buf, path);
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& [name, rec] : records) out.emplace_back(name, rec.shape);
    return out;
}

}  // namespace ca2n
