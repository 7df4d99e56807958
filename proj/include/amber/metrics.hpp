#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "amber/data.hpp"

namespace amber {

/// counts[i*C + j] = pixels of true class i+1 predicted as j+1. Pixels whose
/// truth is 0 are never counted.
struct ConfusionMatrix {
    std::int64_t classes = 0;
    std::vector<std::int64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::int64_t c) : classes(c), counts(static_cast<std::size_t>(c * c), 0) {}

    std::int64_t& at(std::int64_t i, std::int64_t j) { return counts[i * classes + j]; }
    std::int64_t at(std::int64_t i, std::int64_t j) const { return counts[i * classes + j]; }
    std::int64_t total() const;
    std::int64_t row_sum(std::int64_t i) const;
    std::int64_t col_sum(std::int64_t j) const;
    std::int64_t trace() const;

    void add(std::uint16_t truth, std::uint16_t pred);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth,
                          std::int64_t classes);
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::int64_t classes);

/// 100 * trace / N. Throws on N == 0.
double overall_accuracy(const ConfusionMatrix& m);
/// (N*trace - sum row_k*col_k) / (N^2 - sum row_k*col_k); 0 when the denominator vanishes.
double kappa(const ConfusionMatrix& m);
bool kappa_degenerate(const ConfusionMatrix& m);
/// Mean per-class recall in percent over classes with a non-empty row.
double average_accuracy(const ConfusionMatrix& m);
/// 100 * M_ii / row_i, absent for empty rows.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& m);

struct MetricSummary {
    double oa = 0;
    double kappa = 0;
    double aa = 0;
    std::vector<std::optional<double>> per_class;
    std::int64_t pixels = 0;
};

MetricSummary summarize(const ConfusionMatrix& m);

}  // namespace amber
