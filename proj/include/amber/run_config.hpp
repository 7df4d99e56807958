#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "amber/model.hpp"
#include "amber/training.hpp"

namespace amber {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SyntheticSpec {
    std::int64_t classes = 3;
    std::int64_t bands = 16;
    std::int64_t height = 64;
    std::int64_t width = 64;
    double noise = 0.05;
    std::uint64_t seed = 7;
};

struct RebalanceSpec {
    std::uint16_t class_id = 0;
    std::int64_t pixels = 0;
    std::uint64_t seed = 0;
};

/// One JSON document describing data, sampling, model, training and output.
///
///   {
///     "name": "...",
///     "data": {"cube": "x.hdr.json", "labels": "y.hdr.json"}  |  "synthetic": {...},
///     "bands": 16, "n_classes": 3,
///     "sampling": {"patches": 400, "train_fraction": 0.2, "crop_size": 32},
///     "rebalance": {"class_id": 2, "pixels": 700000, "seed": 1},       optional
///     "seed": 7,
///     "model": {"preset": "tiny" | "standard", "schedule": "preserving", ...},
///     "train": {"batch_size": 4, "epochs": 50, "learning_rate": 0.01, "momentum": 0, "flip": true},
///     "eval": {"full_map": true, "micro_batch": 8},
///     "output": "runs/name"
///   }
///
/// Any key not listed here is rejected.
struct RunConfig {
    std::string name;
    std::filesystem::path cube;
    std::filesystem::path labels;
    std::optional<SyntheticSpec> synthetic;
    std::int64_t bands = 0;
    std::int64_t n_classes = 0;
    std::int64_t patches = 0;
    double train_fraction = 0.2;
    std::int64_t crop = kCropSize;
    std::optional<RebalanceSpec> rebalance;
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    bool full_map = true;
    std::int64_t micro_batch = 8;
    std::filesystem::path output;

    nlohmann::ordered_json document;  // effective configuration, echoed into checkpoints

    static RunConfig from_json(const nlohmann::ordered_json& j);
    static nlohmann::ordered_json read_document(const std::filesystem::path& path);
};

/// Sets a dotted key ("train.epochs") in a configuration document.
void set_config_value(nlohmann::ordered_json& doc, const std::string& dotted_key, const nlohmann::ordered_json& value);

}  // namespace amber
