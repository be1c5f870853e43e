#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sodkd/grid.hpp"

namespace sodkd {

enum class NoiseMode { kClean, kDistractorDepth, kLowContrast, kCameraDistortion };

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(const std::string& name);

struct Sample {
    Grid rgb;    // H x W x 3 in [0,1]
    Grid depth;  // H x W x 1 in [0,1], larger value = nearer
    Grid gt;     // H x W x 1 binary
    NoiseMode mode = NoiseMode::kClean;
    std::string id;
};

struct ManifestEntry {
    std::string id;
    NoiseMode mode = NoiseMode::kClean;
    std::uint64_t seed = 0;
    std::string rgb_path;
    std::string depth_path;
    std::string gt_path;
};

struct DatasetManifest {
    int image_size = 0;
    std::uint64_t seed = 0;
    double noise_fraction = 0.0;
    std::vector<ManifestEntry> samples;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;      // same order as manifest.samples
    std::vector<int> train_indices;   // indices into samples
    std::vector<int> test_indices;
};

// Renders a scene with 1-3 foreground shapes over a textured background and
// applies the requested depth corruption. Deterministic per (seed, mode, size).
Sample gen_sample(std::uint64_t seed, NoiseMode mode, int size);

// Generates n samples, ceil(n * noise_fraction) of them with a noise mode
// drawn uniformly from the three corruptions, and splits 80/20 by a seeded
// shuffle.
Dataset gen_dataset(int n, double noise_fraction, std::uint64_t seed, int size);

// Stacks rgb and depth into an H x W x 4 grid (channel order R, G, B, D).
Grid early_fusion(const Sample& sample);

// Returns the network input with the requested channel count: 4 selects the
// fused RGB-D stack, 3 the unchanged RGB grid.
Grid model_input(const Sample& sample, int channels);

void write_sample(const std::filesystem::path& root, const Sample& sample);
Sample read_sample(const std::filesystem::path& root, const ManifestEntry& entry);

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace sodkd
