#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "sclab/model.hpp"

namespace sclab {

struct AttributionMap {
    std::vector<double> values;   // signed, one per input coordinate
    std::vector<double> baseline;
    std::size_t steps = 0;
    int target_class = 0;
};

/// Integrated Gradients along the straight path from `baseline` to `x`,
/// approximated with an m-step midpoint rule:
///   IG_i = (x_i - x'_i) * mean_j d f_c / d x_i at x' + a_j (x - x'),
/// with a_j = (j + 0.5) / m.
inline AttributionMap integrated_gradients(const FCN& f, std::span<const double> x,
                                           std::span<const double> baseline, int target_class,
                                           std::size_t m) {
    if (x.size() != baseline.size()) throw std::invalid_argument("integrated_gradients: length mismatch");
    if (x.size() != f.input_dim()) throw std::invalid_argument("integrated_gradients: input dim mismatch");
    if (m < 1) throw std::invalid_argument("integrated_gradients: need at least one step");

    const std::size_t d = x.size();
    std::vector<double> acc(d, 0.0);
    std::vector<double> point(d);
    for (std::size_t j = 0; j < m; ++j) {
        const double alpha = (static_cast<double>(j) + 0.5) / static_cast<double>(m);
        for (std::size_t i = 0; i < d; ++i) point[i] = baseline[i] + alpha * (x[i] - baseline[i]);
        const auto grad = input_gradient(f, point, target_class);
        for (std::size_t i = 0; i < d; ++i) acc[i] += grad[i];
    }
    AttributionMap map;
    map.baseline.assign(baseline.begin(), baseline.end());
    map.steps = m;
    map.target_class = target_class;
    map.values.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        map.values[i] = (x[i] - baseline[i]) * acc[i] / static_cast<double>(m);
    }
    return map;
}

struct AttributionShares {
    double core = 0.0;
    double spurious = 0.0;
    double noise = 0.0;
};

/// Fraction of total |attribution| landing on each mask. The masks must
/// partition the input coordinates.
inline AttributionShares attribution_shares(const AttributionMap& attr, std::span<const std::size_t> core_mask,
                                            std::span<const std::size_t> spurious_mask,
                                            std::span<const std::size_t> noise_mask) {
    const std::size_t d = attr.values.size();
    if (core_mask.size() + spurious_mask.size() + noise_mask.size() != d) {
        throw std::invalid_argument("attribution_shares: masks do not partition the input");
    }
    double total = 0.0;
    for (double v : attr.values) total += std::abs(v);
    if (total <= 0.0) throw std::invalid_argument("attribution_shares: all-zero attribution");
    auto mask_sum = [&](std::span<const std::size_t> mask) {
        double s = 0.0;
        for (std::size_t i : mask) {
            if (i >= d) throw std::invalid_argument("attribution_shares: mask index out of range");
            s += std::abs(attr.values[i]);
        }
        return s;
    };
    return {mask_sum(core_mask) / total, mask_sum(spurious_mask) / total, mask_sum(noise_mask) / total};
}

/// Shannon entropy (nats) of the normalized absolute attribution map.
inline double attribution_entropy(const AttributionMap& attr) {
    double total = 0.0;
    for (double v : attr.values) total += std::abs(v);
    if (total <= 0.0) throw std::invalid_argument("attribution_entropy: all-zero attribution");
    double h = 0.0;
    for (double v : attr.values) {
        const double p = std::abs(v) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

} // namespace sclab
