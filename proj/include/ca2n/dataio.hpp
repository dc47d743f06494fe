// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ca2n/common.hpp"
#include "ca2n/layout.hpp"
#include "ca2n/tensor.hpp"

namespace ca2n {

struct PairedSample {
    std::string id;
    Tensor<float> sketch;  // [1,1,S,S], strokes = 1 on background 0
    Tensor<float> photo;   // [1,3,S,S]
};

struct DatasetManifest {
    std::vector<PairedSample> samples;  // lexicographic by id
    int resolution = 0;
    std::string provenance;
    std::vector<std::string> warnings;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// ------------------------------------------------------------------- codecs

// Binary netpbm with maxval 255. 1-channel sketches are PGM (P5) and are
// stored inverted: internal 1 = stroke writes byte 0 (dark stroke on white),
// the reader inverts back. 3-channel photos are PPM (P6), byte = quantize(v).
// Quantization is round-half-away-from-zero of 255*v, clamped.
int quantize_byte(float v);
Tensor<float> read_image(const std::string& path, int channels);
void write_image(const Tensor<float>& image, const std::string& path);

// ---------------------------------------------------------------- synthesis

// Procedural faces: skin-tone ellipse head, eye ellipses with irises, a
// triangle or ellipse nose, a mouth arc; geometry and colors jittered per
// sample, all landmarks inside their default layout boxes. The paired sketch
// is a thresholded difference-of-Gaussians edge map of the photo.
DatasetManifest synth_faces(int n, std::uint64_t seed, int resolution);

// DoG sketch of a photo: sigma 1 vs 1.6, threshold 0.08 on the response
// normalized by its absolute maximum; output pixels are exactly 0 or 1.
Tensor<float> sketch_from_photo(const Tensor<float>& photo);

// ------------------------------------------------------------------ storage

// File naming contract: <id>_sketch.pgm and <id>_photo.ppm in a flat dir.
void write_dataset(const DatasetManifest& m, const std::string& dir);
DatasetManifest load_dataset(const std::string& dir, int resolution);

// -------------------------------------------------------------------- split

// Seeded shuffle; test = floor(total/(train+test)) * test_part, remainder to
// train. Both outputs are re-sorted lexicographically by id.
std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& m,
                                                             int train_part, int test_part,
                                                             std::uint64_t seed);

}  // namespace ca2n
