#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"

#include "amber/data.hpp"
#include "amber/model.hpp"

namespace amber {

/// Mean over pixels with label != 0 of -log softmax(logits)[label-1].
/// logits [B,N,h,w], labels B*h*w values in 0..N. No defined pixel -> 0.
template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> labels);

/// p <- p - lr * g
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, T lr);

template <typename T>
class Sgd {
   public:
    Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}
    void step(const NamedParams<T>& params);
    static void zero_grad(const NamedParams<T>& params);

   private:
    double lr_;
    double momentum_;
    std::vector<std::vector<T>> velocity_;
};

struct TrainConfig {
    std::int64_t batch_size = 4;
    std::int64_t epochs = 50;
    double learning_rate = 0.01;
    double momentum = 0.0;
    bool flip = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Forms a [B,1,D,crop,crop] batch and the matching flattened label tiles.
struct Batch {
    Tensor<float> x;
    std::vector<std::uint16_t> labels;
};
Batch make_batch(const HyperCube& cube, const LabelMap& labels, std::span<const Patch> patches, std::int64_t crop,
                 Rng* flip_rng);

using EpochCallback = std::function<void(std::int64_t epoch, double mean_loss)>;

/// Trains in place on the train patches of `ps`. `cube` must already be
/// standardized. Returns the per-epoch mean loss (mean over batches).
std::vector<double> train(const TrainConfig& cfg, AmberModel<float>& model, const HyperCube& cube,
                          const LabelMap& labels, const PatchSet& ps, const EpochCallback& on_epoch = {});

/// Argmax (+1, ties to the lowest class) at the center pixel of each patch.
std::vector<std::uint16_t> predict_centers(const AmberModel<float>& model, const HyperCube& cube,
                                           const LabelMap& labels, std::span<const Patch> patches,
                                           std::int64_t crop = kCropSize, std::int64_t micro_batch = 8);

/// Per-pixel argmax + 1 over a [B,N,h,w] logit map, ties to the lowest class.
std::vector<std::uint16_t> argmax_classes(const Tensor<float>& logits);

struct Checkpoint {
    AmberModel<float> model;
    BandStats stats;
    std::vector<double> loss_history;
    nlohmann::ordered_json config;  // echo of the run configuration
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Standardizes with the checkpoint statistics, reflect-pads H and W up to a
/// multiple of the crop, classifies non-overlapping tiles and stitches them.
LabelMap predict_full(const Checkpoint& ckpt, const HyperCube& cube, std::int64_t micro_batch = 4);

void write_loss_csv(const std::vector<double>& history, const std::filesystem::path& path);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

}  // namespace amber
