#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "evtrk/tensor.hpp"

namespace evtrk {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;

    bool ok(double tol = 1e-4) const { return coords_checked > 0 && max_rel_err < tol; }
};

// Central finite differences against an analytic gradient on a sampled set of
// coordinates. `loss` re-runs the full forward pass from the current values.
// Relative error uses max(|analytic|, |numeric|, 1e-4) as denominator so
// near-zero gradients are compared absolutely at 1e-8 resolution.
inline GradCheckReport finite_difference_check(std::span<double> values,
                                               std::span<const double> analytic,
                                               const std::function<double()>& loss, Rng& rng,
                                               int max_coords = 32, double h = 1e-5) {
    GradCheckReport report;
    if (values.empty()) return report;
    std::vector<size_t> coords;
    if (static_cast<int>(values.size()) <= max_coords) {
        coords.resize(values.size());
        for (size_t i = 0; i < values.size(); ++i) coords[i] = i;
    } else {
        for (int i = 0; i < max_coords; ++i)
            coords.push_back(static_cast<size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(values.size()) - 1)));
        std::sort(coords.begin(), coords.end());
        coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t idx : coords) {
        double saved = values[idx];
        values[idx] = saved + h;
        double lp = loss();
        values[idx] = saved - h;
        double lm = loss();
        values[idx] = saved;
        double numeric = (lp - lm) / (2.0 * h);
        double a = analytic[idx];
        double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
        double rel = std::abs(a - numeric) / denom;
        report.max_rel_err = std::max(report.max_rel_err, rel);
        ++report.coords_checked;
    }
    return report;
}

// Weighted-sum readout used to reduce a tensor-valued output to a scalar for
// gradient checks; the weights play the role of the upstream gradient.
struct WeightedSum {
    std::vector<double> weights;

    explicit WeightedSum(size_t n, Rng& rng) : weights(n) {
        for (double& w : weights) w = rng.uniform(-1.0, 1.0);
    }
    double operator()(const Tensor4& t) const {
        double acc = 0.0;
        const double* p = t.data();
        for (size_t i = 0; i < weights.size(); ++i) acc += weights[i] * p[i];
        return acc;
    }
    Tensor4 upstream(int n, int c, int h, int w) const {
        Tensor4 g(n, c, h, w);
        std::copy(weights.begin(), weights.end(), g.data());
        return g;
    }
};

}  // namespace evtrk
