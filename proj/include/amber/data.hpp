#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amber/rng.hpp"
#include "amber/tensor.hpp"

namespace amber {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// D x H x W reflectance cube, band-sequential, row-major within a band.
struct HyperCube {
    std::int64_t bands = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> values;
    std::vector<double> wavelengths;  // nm, optional

    HyperCube() = default;
    HyperCube(std::int64_t d, std::int64_t h, std::int64_t w)
        : bands(d), height(h), width(w), values(static_cast<std::size_t>(d * h * w), 0.0f) {}

    float& at(std::int64_t d, std::int64_t r, std::int64_t c) { return values[(d * height + r) * width + c]; }
    float at(std::int64_t d, std::int64_t r, std::int64_t c) const { return values[(d * height + r) * width + c]; }
    void validate() const;
};

/// H x W class map, 0 = undefined.
struct LabelMap {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint16_t> labels;

    LabelMap() = default;
    LabelMap(std::int64_t h, std::int64_t w) : height(h), width(w), labels(static_cast<std::size_t>(h * w), 0) {}

    std::uint16_t& at(std::int64_t r, std::int64_t c) { return labels[r * width + c]; }
    std::uint16_t at(std::int64_t r, std::int64_t c) const { return labels[r * width + c]; }
    std::uint16_t max_label() const;
    std::int64_t count(std::uint16_t k) const;
    void validate(std::int64_t n_classes) const;
};

// "<dir>/<name>.hdr.json" -> "<dir>/<name>.raw"
std::filesystem::path payload_path(const std::filesystem::path& header);

void write_cube(const HyperCube& cube, const std::filesystem::path& header);
HyperCube read_cube(const std::filesystem::path& header);
void write_labels(const LabelMap& labels, const std::filesystem::path& header);
LabelMap read_labels(const std::filesystem::path& header);

struct SyntheticScene {
    HyperCube cube;
    LabelMap labels;
};

/// Voronoi partition with 4*n_classes sites; every class owns at least one
/// site. Class k has a fixed signature made of 2 or 3 Gaussian bumps over
/// the band index; pixels get that signature plus N(0, noise_sigma^2) noise.
SyntheticScene generate_synthetic_scene(std::int64_t n_classes, std::int64_t bands, std::int64_t height,
                                        std::int64_t width, std::uint64_t seed, double noise_sigma);

constexpr std::int64_t kCropSize = 32;

enum class Split : std::uint8_t { train, test };

struct Patch {
    std::int64_t row = 0;
    std::int64_t col = 0;
    Split split = Split::test;
    bool operator==(const Patch&) const = default;
};

struct PatchSet {
    std::vector<Patch> patches;
    std::int64_t crop = kCropSize;
    std::uint64_t seed = 0;

    std::int64_t count(Split s) const;
    std::vector<Patch> of(Split s) const;
};

/// Centers whose crop fits with a symmetric margin of crop/2 and whose label is defined.
std::vector<std::pair<std::int64_t, std::int64_t>> eligible_centers(const LabelMap& labels,
                                                                    std::int64_t crop = kCropSize);
PatchSet sample_patches(const LabelMap& labels, std::int64_t n, std::uint64_t seed, std::int64_t crop = kCropSize);
/// floor(fraction * n) patches become train, chosen uniformly.
PatchSet split_patches(const PatchSet& ps, double train_fraction, std::uint64_t seed);

/// Fraction of test patches whose crop window intersects some train window.
double train_test_overlap(const PatchSet& ps);

struct LabelTile {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint16_t> labels;
};

struct Crop {
    Tensor<float> data;  // [1, D, crop, crop]
    LabelTile labels;
};

/// Window rows/cols [center - crop/2, center + crop/2).
Crop extract_crop(const HyperCube& cube, const LabelMap& labels, std::int64_t row, std::int64_t col,
                  std::int64_t crop = kCropSize);

/// Reverses H and/or W of both the crop and its labels.
void apply_flip(Crop& crop, bool flip_h, bool flip_w);
/// Draws coin() for H, then coin() for W.
void random_flip(Crop& crop, Rng& rng);

/// Relabels exactly n_pixels uniformly chosen pixels of class_id to 0.
LabelMap rebalance_to_undefined(const LabelMap& labels, std::uint16_t class_id, std::int64_t n_pixels,
                                std::uint64_t seed);

struct BandStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    void apply(HyperCube& cube) const;
};

/// Per-band statistics over every pixel of every train crop window.
BandStats train_band_stats(const HyperCube& cube, const PatchSet& ps);

}  // namespace amber
