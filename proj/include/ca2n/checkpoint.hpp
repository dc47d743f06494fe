// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ca2n/models.hpp"

namespace ca2n {

// Binary checkpoint: magic "CA2N", format version (u32 LE), tensor count
// (u32 LE), then per tensor: name length (u32 LE) + UTF-8 name, rank (u32 LE),
// dims (u32 LE each), raw float32 LE data; trailing CRC32 (zlib polynomial)
// of every preceding byte. Fixed endianness keeps files portable.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const NamedParams<float>& params, const std::string& path);

// Loads into an existing model: the file's tensor name set must match the
// model's exactly (missing/extra names are listed), shapes must agree, and
// the CRC must verify before anything is copied.
void load_checkpoint(NamedParams<float>& params, const std::string& path);

// Names and shapes only, CRC-verified. For tooling and tests.
std::vector<std::pair<std::string, Shape>> peek_checkpoint(const std::string& path);

}  // namespace ca2n
