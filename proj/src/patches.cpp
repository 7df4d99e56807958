#include <algorithm>
#include <cmath>

#include "amber/data.hpp"

namespace amber {

std::int64_t PatchSet::count(Split s) const {
    return std::count_if(patches.begin(), patches.end(), [s](const Patch& p) { return p.split == s; });
}

std::vector<Patch> PatchSet::of(Split s) const {
    std::vector<Patch> out;
    std::copy_if(patches.begin(), patches.end(), std::back_inserter(out), [s](const Patch& p) { return p.split == s; });
    return out;
}

std::vector<std::pair<std::int64_t, std::int64_t>> eligible_centers(const LabelMap& labels, std::int64_t crop) {
    const auto half = crop / 2;
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t r = half; r <= labels.height - half - 1; ++r)
        for (std::int64_t c = half; c <= labels.width - half - 1; ++c)
            if (labels.at(r, c) != 0) out.emplace_back(r, c);
    return out;
}

PatchSet sample_patches(const LabelMap& labels, std::int64_t n, std::uint64_t seed, std::int64_t crop) {
    if (n < 0) throw std::invalid_argument("sample_patches: n must be >= 0");
    if (crop < 2 || crop % 2 != 0) throw std::invalid_argument("sample_patches: crop must be even and >= 2");
    auto pool = eligible_centers(labels, crop);
    const auto m = static_cast<std::int64_t>(pool.size());
    if (n > m)
        throw std::invalid_argument("sample_patches: requested " + std::to_string(n) + " patches but only " +
                                    std::to_string(m) + " eligible centers exist");
    Rng rng(seed);
    PatchSet ps;
    ps.crop = crop;
    ps.seed = seed;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(m - i)));
        std::swap(pool[i], pool[j]);
        ps.patches.push_back({pool[i].first, pool[i].second, Split::test});
    }
    return ps;
}

PatchSet split_patches(const PatchSet& ps, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
        throw std::invalid_argument("split_patches: train fraction must lie in [0, 1]");
    const auto n = static_cast<std::int64_t>(ps.patches.size());
    const auto n_train = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    std::vector<std::int64_t> order(n);
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    PatchSet out = ps;
    for (auto& p : out.patches) p.split = Split::test;
    for (std::int64_t i = 0; i < n_train; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(order[i], order[j]);
        out.patches[order[i]].split = Split::train;
    }
    return out;
}

double train_test_overlap(const PatchSet& ps) {
    const auto train = ps.of(Split::train);
    const auto test = ps.of(Split::test);
    if (test.empty()) return 0.0;
    std::int64_t hit = 0;
    for (const auto& t : test)
        for (const auto& s : train)
            if (std::abs(t.row - s.row) < ps.crop && std::abs(t.col - s.col) < ps.crop) {
                ++hit;
                break;
            }
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

Crop extract_crop(const HyperCube& cube, const LabelMap& labels, std::int64_t row, std::int64_t col,
                  std::int64_t crop) {
    if (labels.height != cube.height || labels.width != cube.width)
        throw ShapeError("extract_crop: cube and label extents differ");
    const auto half = crop / 2;
    const auto r0 = row - half;
    const auto c0 = col - half;
    if (r0 < 0 || c0 < 0 || r0 + crop > cube.height || c0 + crop > cube.width)
        throw ShapeError("extract_crop: window around (" + std::to_string(row) + "," + std::to_string(col) +
                         ") leaves the image");
    const auto D = cube.bands;
    std::vector<float> data(static_cast<std::size_t>(D * crop * crop));
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t r = 0; r < crop; ++r)
            std::copy_n(&cube.values[(d * cube.height + r0 + r) * cube.width + c0], crop,
                        &data[(d * crop + r) * crop]);
    LabelTile tile{crop, crop, std::vector<std::uint16_t>(static_cast<std::size_t>(crop * crop))};
    for (std::int64_t r = 0; r < crop; ++r)
        std::copy_n(&labels.labels[(r0 + r) * labels.width + c0], crop, &tile.labels[r * crop]);
    return {Tensor<float>(Shape{1, D, crop, crop}, std::move(data)), std::move(tile)};
}

void apply_flip(Crop& crop, bool flip_h, bool flip_w) {
    if (!flip_h && !flip_w) return;
    const auto h = crop.labels.height;
    const auto w = crop.labels.width;
    auto flip_plane = [&](auto* plane) {
        if (flip_h)
            for (std::int64_t r = 0; r < h / 2; ++r) std::swap_ranges(plane + r * w, plane + (r + 1) * w, plane + (h - 1 - r) * w);
        if (flip_w)
            for (std::int64_t r = 0; r < h; ++r) std::reverse(plane + r * w, plane + (r + 1) * w);
    };
    auto data = crop.data.data();
    const auto planes = static_cast<std::int64_t>(data.size()) / (h * w);
    for (std::int64_t p = 0; p < planes; ++p) flip_plane(data.data() + p * h * w);
    flip_plane(crop.labels.labels.data());
}

void random_flip(Crop& crop, Rng& rng) {
    const bool fh = rng.coin();
    const bool fw = rng.coin();
    apply_flip(crop, fh, fw);
}

LabelMap rebalance_to_undefined(const LabelMap& labels, std::uint16_t class_id, std::int64_t n_pixels,
                                std::uint64_t seed) {
    if (class_id == 0) throw std::invalid_argument("rebalance: class 0 is already undefined");
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(labels.labels.size()); ++i)
        if (labels.labels[i] == class_id) idx.push_back(i);
    const auto m = static_cast<std::int64_t>(idx.size());
    if (n_pixels < 0 || n_pixels > m)
        throw std::invalid_argument("rebalance: asked to clear " + std::to_string(n_pixels) + " pixels of class " +
                                    std::to_string(class_id) + " but only " + std::to_string(m) + " exist");
    Rng rng(seed);
    LabelMap out = labels;
    for (std::int64_t i = 0; i < n_pixels; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(m - i)));
        std::swap(idx[i], idx[j]);
        out.labels[idx[i]] = 0;
    }
    return out;
}

void BandStats::apply(HyperCube& cube) const {
    if (static_cast<std::int64_t>(mean.size()) != cube.bands || stddev.size() != mean.size())
        throw ShapeError("band stats cover " + std::to_string(mean.size()) + " bands, cube has " +
                         std::to_string(cube.bands));
    const auto plane = cube.height * cube.width;
    for (std::int64_t d = 0; d < cube.bands; ++d) {
        const double inv = 1.0 / stddev[d];
        for (std::int64_t i = 0; i < plane; ++i) {
            auto& v = cube.values[d * plane + i];
            v = static_cast<float>((v - mean[d]) * inv);
        }
    }
}

BandStats train_band_stats(const HyperCube& cube, const PatchSet& ps) {
    const auto train = ps.of(Split::train);
    if (train.empty()) throw std::invalid_argument("band statistics need at least one train patch");
    const auto half = ps.crop / 2;
    BandStats st;
    st.mean.assign(cube.bands, 0.0);
    st.stddev.assign(cube.bands, 1.0);
    for (std::int64_t d = 0; d < cube.bands; ++d) {
        double s = 0, s2 = 0;
        std::int64_t n = 0;
        for (const auto& p : train)
            for (std::int64_t r = p.row - half; r < p.row + half; ++r)
                for (std::int64_t c = p.col - half; c < p.col + half; ++c) {
                    const double v = cube.at(d, r, c);
                    s += v;
                    s2 += v * v;
                    ++n;
                }
        const double mu = s / static_cast<double>(n);
        const double var = std::max(0.0, s2 / static_cast<double>(n) - mu * mu);
        st.mean[d] = mu;
        st.stddev[d] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return st;
}

}  // namespace amber
