#include <cmath>
#include <set>

#include "amber/data.hpp"

namespace amber {

SyntheticScene generate_synthetic_scene(std::int64_t n_classes, std::int64_t bands, std::int64_t height,
                                        std::int64_t width, std::uint64_t seed, double noise_sigma) {
    if (n_classes < 2) throw std::invalid_argument("synthetic scene needs at least 2 classes");
    if (bands < 1 || height < 1 || width < 1) throw std::invalid_argument("synthetic scene extents must be positive");
    if (noise_sigma < 0) throw std::invalid_argument("noise sigma must be >= 0");
    const auto n_sites = 4 * n_classes;
    if (n_sites > height * width) throw std::invalid_argument("image too small for the requested class count");

    Rng rng(seed);

    // signatures: sum of 2 or 3 bumps over the band index
    std::vector<std::vector<double>> signature(static_cast<std::size_t>(n_classes), std::vector<double>(bands, 0.0));
    for (auto& sig : signature) {
        const int n_bumps = 2 + static_cast<int>(rng.below(2));
        for (int b = 0; b < n_bumps; ++b) {
            const double center = rng.uniform(0.0, static_cast<double>(bands - 1));
            const double spread = std::max(1.0, rng.uniform(0.08, 0.25) * static_cast<double>(bands));
            const double amp = rng.uniform(0.3, 1.0);
            for (std::int64_t d = 0; d < bands; ++d) {
                const double z = (static_cast<double>(d) - center) / spread;
                sig[d] += amp * std::exp(-0.5 * z * z);
            }
        }
    }

    struct Site {
        std::int64_t r, c;
        std::uint16_t cls;
    };
    std::vector<Site> sites;
    std::set<std::int64_t> taken;
    while (static_cast<std::int64_t>(sites.size()) < n_sites) {
        const auto idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(height * width)));
        if (!taken.insert(idx).second) continue;
        const auto k = static_cast<std::int64_t>(sites.size());
        const auto cls = k < n_classes ? k + 1 : static_cast<std::int64_t>(rng.below(n_classes)) + 1;
        sites.push_back({idx / width, idx % width, static_cast<std::uint16_t>(cls)});
    }

    SyntheticScene scene{HyperCube(bands, height, width), LabelMap(height, width)};
    for (std::int64_t r = 0; r < height; ++r)
        for (std::int64_t c = 0; c < width; ++c) {
            std::int64_t best = -1;
            std::int64_t best_d2 = 0;
            for (const auto& s : sites) {
                const auto d2 = (s.r - r) * (s.r - r) + (s.c - c) * (s.c - c);
                if (best < 0 || d2 < best_d2) {
                    best = &s - sites.data();
                    best_d2 = d2;
                }
            }
            scene.labels.at(r, c) = sites[best].cls;
        }

    // noise drawn band-major, matching the payload order
    for (std::int64_t d = 0; d < bands; ++d)
        for (std::int64_t r = 0; r < height; ++r)
            for (std::int64_t c = 0; c < width; ++c) {
                const auto& sig = signature[scene.labels.at(r, c) - 1];
                const double noise = noise_sigma > 0 ? noise_sigma * rng.normal() : 0.0;
                scene.cube.at(d, r, c) = static_cast<float>(sig[d] + noise);
            }
    return scene;
}

}  // namespace amber
