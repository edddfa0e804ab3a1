#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sclab/matrix.hpp"

namespace sclab {

/// Absolute threshold below which a value counts as zero (sparsity, dead
/// neurons). ReLU produces exact zeros; the slack only guards float noise.
inline constexpr double kZeroTau = 1e-12;

struct CrossEntropyResult {
    std::vector<double> loss; // per-sample -log softmax(logits)[y]
    Matrix grad;              // per-sample softmax - onehot (not averaged)
};

/// Softmax cross-entropy with max-subtraction log-sum-exp stabilization.
inline CrossEntropyResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) {
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    }
    CrossEntropyResult res;
    res.loss.resize(n);
    res.grad = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        }
        const double* z = logits.row(i);
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (!std::isfinite(z[j])) {
                throw std::invalid_argument("softmax_cross_entropy: non-finite logit");
            }
            zmax = std::max(zmax, z[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(sum);
        res.loss[i] = lse - z[y];
        double* g = res.grad.row(i);
        for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(z[j] - zmax) / sum;
        g[y] -= 1.0;
    }
    return res;
}

/// l_p norm for p >= 1; p = infinity gives the max norm.
inline double lp_norm(std::span<const double> v, double p) {
    if (v.empty()) throw std::invalid_argument("lp_norm: empty vector");
    if (std::isinf(p)) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
    if (p < 1.0) throw std::invalid_argument("lp_norm: order must be >= 1");
    if (p == 1.0) {
        double s = 0.0;
        for (double x : v) s += std::abs(x);
        return s;
    }
    if (p == 2.0) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }
    double s = 0.0;
    for (double x : v) s += std::pow(std::abs(x), p);
    return std::pow(s, 1.0 / p);
}

/// Counting "norm": number of entries with |v_i| > tau.
inline std::size_t l0_norm(std::span<const double> v, double tau = kZeroTau) {
    std::size_t cnt = 0;
    for (double x : v) {
        if (std::abs(x) > tau) ++cnt;
    }
    return cnt;
}

} // namespace sclab
