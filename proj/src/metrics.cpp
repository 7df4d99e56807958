#include "amber/metrics.hpp"

#include <spdlog/spdlog.h>

namespace amber {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto v : counts) n += v;
    return n;
}

std::int64_t ConfusionMatrix::row_sum(std::int64_t i) const {
    std::int64_t n = 0;
    for (std::int64_t j = 0; j < classes; ++j) n += at(i, j);
    return n;
}

std::int64_t ConfusionMatrix::col_sum(std::int64_t j) const {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < classes; ++i) n += at(i, j);
    return n;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < classes; ++i) n += at(i, i);
    return n;
}

void ConfusionMatrix::add(std::uint16_t truth, std::uint16_t pred) {
    if (truth == 0) return;
    if (truth > classes) throw std::invalid_argument("confusion: true label " + std::to_string(truth) + " > " + std::to_string(classes));
    if (pred == 0 || pred > classes)
        throw std::invalid_argument("confusion: predicted label " + std::to_string(pred) + " outside 1.." +
                                    std::to_string(classes));
    ++at(truth - 1, pred - 1);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes != classes) throw std::invalid_argument("confusion: class counts differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionMatrix confusion(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth,
                          std::int64_t classes) {
    if (pred.size() != truth.size()) throw std::invalid_argument("confusion: prediction and truth sizes differ");
    if (classes < 1) throw std::invalid_argument("confusion: need at least one class");
    ConfusionMatrix m(classes);
    for (std::size_t i = 0; i < pred.size(); ++i) m.add(truth[i], pred[i]);
    return m;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::int64_t classes) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw std::invalid_argument("confusion: prediction is " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + ", truth is " + std::to_string(truth.height) + "x" +
                                    std::to_string(truth.width));
    return confusion(pred.labels, truth.labels, classes);
}

double overall_accuracy(const ConfusionMatrix& m) {
    const auto n = m.total();
    if (n == 0) throw std::invalid_argument("overall accuracy: no counted pixels");
    return 100.0 * static_cast<double>(m.trace()) / static_cast<double>(n);
}

namespace {

// exact in 64-bit for any realistic pixel count; the final division is in double
struct KappaTerms {
    double num;
    double den;
};

KappaTerms kappa_terms(const ConfusionMatrix& m) {
    const auto n = static_cast<double>(m.total());
    double chance = 0;
    for (std::int64_t k = 0; k < m.classes; ++k) chance += static_cast<double>(m.row_sum(k)) * static_cast<double>(m.col_sum(k));
    return {n * static_cast<double>(m.trace()) - chance, n * n - chance};
}

}  // namespace

bool kappa_degenerate(const ConfusionMatrix& m) { return m.total() > 0 && kappa_terms(m).den == 0.0; }

double kappa(const ConfusionMatrix& m) {
    if (m.total() == 0) throw std::invalid_argument("kappa: no counted pixels");
    const auto t = kappa_terms(m);
    if (t.den == 0.0) {
        spdlog::warn("kappa: chance agreement is total (single-class data); reporting 0");
        return 0.0;
    }
    return t.num / t.den;
}

double average_accuracy(const ConfusionMatrix& m) {
    double sum = 0;
    std::int64_t present = 0;
    for (std::int64_t i = 0; i < m.classes; ++i) {
        const auto row = m.row_sum(i);
        if (row == 0) continue;
        sum += static_cast<double>(m.at(i, i)) / static_cast<double>(row);
        ++present;
    }
    if (present == 0) throw std::invalid_argument("average accuracy: no counted pixels");
    return 100.0 * sum / static_cast<double>(present);
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& m) {
    std::vector<std::optional<double>> out;
    for (std::int64_t i = 0; i < m.classes; ++i) {
        const auto row = m.row_sum(i);
        if (row == 0)
            out.emplace_back();
        else
            out.emplace_back(100.0 * static_cast<double>(m.at(i, i)) / static_cast<double>(row));
    }
    return out;
}

MetricSummary summarize(const ConfusionMatrix& m) {
    return {overall_accuracy(m), kappa(m), average_accuracy(m), per_class_accuracy(m), m.total()};
}

}  // namespace amber
