#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "amber/metrics.hpp"
#include "amber/run_config.hpp"

namespace amber {

struct Dataset {
    HyperCube cube;
    LabelMap labels;
};

/// Reads (or synthesizes) the scene and applies any configured rebalancing.
Dataset load_dataset(const RunConfig& rc);

struct FoldResult {
    std::uint64_t seed = 0;
    std::int64_t train_patches = 0;
    std::int64_t test_patches = 0;
    double overlap = 0;  // fraction of test crops touching a train crop
    std::vector<double> loss_history;
    ConfusionMatrix train_centers;
    ConfusionMatrix test_centers;
    std::optional<ConfusionMatrix> full_map;  // every defined pixel of the scene
};

struct FoldRun {
    FoldResult result;
    Checkpoint checkpoint;
};

using LogFn = std::function<void(const std::string&)>;

/// Sample, split, standardize, train from scratch and evaluate with one master seed.
FoldRun run_fold(const RunConfig& rc, const Dataset& data, std::uint64_t seed, const LogFn& log = {});

struct Aggregate {
    double mean = 0;
    double stddev = 0;  // sample standard deviation, 0 for a single fold
};

Aggregate aggregate(const std::vector<double>& values);

struct CvReport {
    std::string name;
    std::int64_t classes = 0;
    std::uint64_t seed = 0;
    std::vector<FoldResult> folds;

    nlohmann::ordered_json to_json() const;
    /// Per-class rows, then OA (%), Kappa x 100, AA (%), as mean +- std over folds.
    std::string table() const;
};

/// Fold f uses master seed rc.seed + f.
CvReport monte_carlo_cv(const RunConfig& rc, const Dataset& data, std::int64_t folds, const LogFn& log = {});

struct DryRunReport {
    std::string name;
    std::int64_t parameters = 0;
    Shape input_shape;
    Shape output_shape;
    Shape expected_shape;
    bool finite = false;
    double seconds = 0;

    bool ok() const { return finite && output_shape == expected_shape; }
    nlohmann::ordered_json to_json() const;
};

/// Builds the configured model and classifies one random batch of
/// [batch_size, 1, bands, crop, crop] without touching any data files.
DryRunReport dry_run(const RunConfig& rc);

nlohmann::ordered_json summary_json(const MetricSummary& s);
nlohmann::ordered_json confusion_json(const ConfusionMatrix& m);

}  // namespace amber
