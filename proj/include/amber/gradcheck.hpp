#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amber/tensor.hpp"

namespace amber {

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradcheckOptions {
    double step = 1e-4;               // central-difference step
    std::int64_t max_coords = 0;      // per input; 0 checks every coordinate
};

/// Compares reverse-mode gradients of L = sum(f(inputs) * R), R a fixed
/// random tensor, against central differences. Returns the largest
/// normwise relative error ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-6) over inputs.
double gradient_error(const GradFn& f, const std::vector<Tensor<double>>& inputs, std::uint64_t seed,
                      const GradcheckOptions& opt = {});

struct GradcheckEntry {
    std::string name;
    bool composite = false;
    double error = 0;
    double tolerance = 0;
    bool pass() const { return error <= tolerance; }
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    bool pass() const;
};

/// Every registered op at `op_tolerance`, then the attention block, Mix-FFN,
/// an encoder block and the tiny end-to-end model (8x8x8 grid) at `model_tolerance`.
GradcheckReport run_gradcheck(std::uint64_t seed, double op_tolerance = 1e-4, double model_tolerance = 1e-3);

}  // namespace amber
