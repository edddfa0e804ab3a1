#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sclab/matrix.hpp"
#include "sclab/rng.hpp"

namespace sclab {

/// Labeled samples with a class label y, a bias label b, and index masks
/// telling which input columns carry the core / spurious / noise features.
/// A sample is bias-conflicting (BC) when y != b; rho is the fraction of BC
/// rows in the set.
struct SCDataset {
    Matrix inputs; // n x d
    std::vector<int> labels_y;
    std::vector<int> labels_b;
    std::vector<std::size_t> core_mask;
    std::vector<std::size_t> spurious_mask;
    std::vector<std::size_t> noise_mask;
    double rho = 0.0;
    int num_classes = 2;

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
    bool bias_conflicting(std::size_t i) const { return labels_y[i] != labels_b[i]; }
};

struct ParityConfig {
    std::size_t core_bits = 6;
    std::size_t spurious_bits = 2;
    std::size_t noise_bits = 8;
    std::size_t n_samples = 10000;
    double rho = 0.1;

    std::size_t dim() const { return core_bits + spurious_bits + noise_bits; }

    void validate() const {
        if (core_bits == 0) throw std::invalid_argument("ParityConfig: core_bits must be positive");
        if (spurious_bits < 1 || core_bits <= spurious_bits) {
            throw std::invalid_argument("ParityConfig: requires core_bits > spurious_bits >= 1");
        }
        if (n_samples == 0) throw std::invalid_argument("ParityConfig: n_samples must be positive");
        if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("ParityConfig: rho outside [0,1]");
    }
};

struct MoonStarConfig {
    std::size_t image_side = 20;
    std::size_t n_samples = 10000;
    double rho = 0.1;

    std::size_t dim() const { return image_side * image_side; }

    void validate() const {
        if (image_side < 16) throw std::invalid_argument("MoonStarConfig: image_side must be >= 16");
        if (n_samples == 0) throw std::invalid_argument("MoonStarConfig: n_samples must be positive");
        if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("MoonStarConfig: rho outside [0,1]");
    }
};

/// Parity (0 or 1) of a 0/1-valued slice.
inline int parity_of(std::span<const double> bits) {
    int p = 0;
    for (double b : bits) {
        if (b > 0.5) p ^= 1;
    }
    return p;
}

namespace detail {

// (y, b) pairs with exact group sizes: floor(rho*n) bias-conflicting rows and
// both labels split evenly within the BA/BC groups (+-1). Row order is then
// shuffled so group structure carries no positional signal.
inline std::vector<std::pair<int, int>> make_label_pairs(std::size_t n, double rho, Rng& rng) {
    const auto n_bc = static_cast<std::size_t>(rho * static_cast<double>(n));
    if (rho > 0.0 && n_bc == 0) {
        std::fprintf(stderr, "warning: rho=%g with n=%zu yields 0 bias-conflicting rows\n", rho, n);
    }
    const std::size_t n_ba = n - n_bc;
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(n);
    const std::size_t ba0 = n_ba - n_ba / 2;
    const std::size_t bc0 = n_bc - n_bc / 2;
    for (std::size_t i = 0; i < ba0; ++i) pairs.emplace_back(0, 0);
    for (std::size_t i = 0; i < n_ba - ba0; ++i) pairs.emplace_back(1, 1);
    for (std::size_t i = 0; i < bc0; ++i) pairs.emplace_back(0, 1);
    for (std::size_t i = 0; i < n_bc - bc0; ++i) pairs.emplace_back(1, 0);
    rng.shuffle(pairs);
    return pairs;
}

// Fills `out` with a bit pattern of the given length whose parity equals
// `target`: length-1 free coin flips plus one parity-fixing bit. This draws
// uniformly from the 2^(length-1) patterns of the required parity.
inline void fill_parity_bits(double* out, std::size_t length, int target, Rng& rng) {
    int acc = 0;
    for (std::size_t i = 0; i + 1 < length; ++i) {
        const int bit = rng.bernoulli(0.5) ? 1 : 0;
        out[i] = static_cast<double>(bit);
        acc ^= bit;
    }
    out[length - 1] = static_cast<double>(acc ^ target);
}

} // namespace detail

/// Parity dataset: rows are concat(core bits, spurious bits, noise bits);
/// y = parity(core), b = parity(spurious). The spurious block is shorter, so
/// its parity is the simpler feature.
inline SCDataset gen_parity(const ParityConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = cfg.n_samples, d = cfg.dim();
    const auto pairs = detail::make_label_pairs(n, cfg.rho, rng);

    SCDataset ds;
    ds.inputs = Matrix(n, d);
    ds.labels_y.resize(n);
    ds.labels_b.resize(n);
    ds.rho = cfg.rho;
    ds.num_classes = 2;
    for (std::size_t j = 0; j < cfg.core_bits; ++j) ds.core_mask.push_back(j);
    for (std::size_t j = 0; j < cfg.spurious_bits; ++j) ds.spurious_mask.push_back(cfg.core_bits + j);
    for (std::size_t j = 0; j < cfg.noise_bits; ++j) {
        ds.noise_mask.push_back(cfg.core_bits + cfg.spurious_bits + j);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto [y, b] = pairs[i];
        ds.labels_y[i] = y;
        ds.labels_b[i] = b;
        double* row = ds.inputs.row(i);
        detail::fill_parity_bits(row, cfg.core_bits, y, rng);
        detail::fill_parity_bits(row + cfg.core_bits, cfg.spurious_bits, b, rng);
        for (std::size_t j = 0; j < cfg.noise_bits; ++j) {
            row[cfg.core_bits + cfg.spurious_bits + j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
    }
    return ds;
}

namespace detail {

struct Point {
    double x, y;
};

// Per-sample shape randomization. Scale, crescent cut geometry, and star
// pointiness all vary so the class signal is the silhouette itself rather
// than any single pixel statistic; ranges keep the mean pixel counts of the
// two classes within a few percent.
struct ShapeParams {
    double radius;     // outer radius in pixels
    double theta;      // orientation
    double cut_offset; // crescent: cutting disk center offset, fraction of radius
    double cut_radius; // crescent: cutting disk radius, fraction of radius
    double inner;      // star: inner vertex radius, fraction of radius
};

// Crescent = disk minus an offset cutting disk.
inline bool in_crescent(Point p, Point c, const ShapeParams& s) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    if (dx * dx + dy * dy > s.radius * s.radius) return false;
    const double cx = c.x + s.cut_offset * s.radius * std::cos(s.theta);
    const double cy = c.y + s.cut_offset * s.radius * std::sin(s.theta);
    const double ex = p.x - cx, ey = p.y - cy;
    const double rcut = s.cut_radius * s.radius;
    return ex * ex + ey * ey > rcut * rcut;
}

// Five-armed star: simple 10-gon alternating outer/inner radius, tested by
// crossing number.
inline bool in_star(Point p, Point c, const ShapeParams& s) {
    constexpr int kVerts = 10;
    double vx[kVerts], vy[kVerts];
    for (int k = 0; k < kVerts; ++k) {
        const double rad = (k % 2 == 0) ? s.radius : s.inner * s.radius;
        const double ang = s.theta + std::numbers::pi * static_cast<double>(k) / 5.0;
        vx[k] = c.x + rad * std::cos(ang);
        vy[k] = c.y + rad * std::sin(ang);
    }
    bool inside = false;
    for (int k = 0, j = kVerts - 1; k < kVerts; j = k++) {
        if ((vy[k] > p.y) != (vy[j] > p.y)) {
            const double xint = vx[j] + (p.y - vy[j]) / (vy[k] - vy[j]) * (vx[k] - vx[j]);
            if (p.x < xint) inside = !inside;
        }
    }
    return inside;
}

} // namespace detail

/// Moon-star dataset: binary images of a crescent (class 0) or a five-armed
/// star (class 1). The spurious feature is the quadrant pair holding the
/// object: bias 0 places it in {NE, SW}, bias 1 in {NW, SE}. Shape position
/// within the quadrant and orientation are randomized, so the class signal
/// is the shape itself.
inline SCDataset gen_moon_star(const MoonStarConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t side = cfg.image_side, n = cfg.n_samples, d = cfg.dim();
    const double quad = static_cast<double>(side) / 2.0;
    const double max_radius = 0.35 * quad;
    if (quad / 2.0 - max_radius - 1.0 < 0.0) {
        throw std::invalid_argument("gen_moon_star: shape radius exceeds quadrant bounds");
    }

    // Quadrant centers in (row, col): NE, SW form pair 0; NW, SE pair 1.
    const detail::Point centers[2][2] = {
        {{quad / 2.0, 3.0 * quad / 2.0}, {3.0 * quad / 2.0, quad / 2.0}},  // bias 0: NE, SW
        {{quad / 2.0, quad / 2.0}, {3.0 * quad / 2.0, 3.0 * quad / 2.0}},  // bias 1: NW, SE
    };

    const auto pairs = detail::make_label_pairs(n, cfg.rho, rng);

    SCDataset ds;
    ds.inputs = Matrix(n, d);
    ds.labels_y.resize(n);
    ds.labels_b.resize(n);
    ds.rho = cfg.rho;
    ds.num_classes = 2;
    // Shape and position occupy the same pixels, so every pixel is in the
    // spurious mask and the core/noise masks stay empty.
    for (std::size_t j = 0; j < d; ++j) ds.spurious_mask.push_back(j);

    for (std::size_t i = 0; i < n; ++i) {
        const auto [y, b] = pairs[i];
        ds.labels_y[i] = y;
        ds.labels_b[i] = b;
        const int which = rng.bernoulli(0.5) ? 1 : 0;
        detail::ShapeParams shape;
        shape.radius = rng.uniform(0.5, 1.0) * max_radius;
        shape.theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        shape.cut_offset = rng.uniform(0.45, 0.65);
        shape.cut_radius = rng.uniform(0.7, 0.9);
        shape.inner = rng.uniform(0.4, 0.6);
        // Smaller shapes roam further inside their quadrant.
        const double jitter = quad / 2.0 - shape.radius - 1.0;
        detail::Point c = centers[b][which];
        c.x += rng.uniform(-jitter, jitter);
        c.y += rng.uniform(-jitter, jitter);

        double* row = ds.inputs.row(i);
        // Only rasterize the bounding box of the shape.
        const auto lo_r = static_cast<std::size_t>(std::max(0.0, c.x - shape.radius - 1.0));
        const auto hi_r =
            static_cast<std::size_t>(std::min(static_cast<double>(side), c.x + shape.radius + 1.0));
        const auto lo_c = static_cast<std::size_t>(std::max(0.0, c.y - shape.radius - 1.0));
        const auto hi_c =
            static_cast<std::size_t>(std::min(static_cast<double>(side), c.y + shape.radius + 1.0));
        for (std::size_t r = lo_r; r < hi_r; ++r) {
            for (std::size_t cc = lo_c; cc < hi_c; ++cc) {
                const detail::Point px{static_cast<double>(r) + 0.5, static_cast<double>(cc) + 0.5};
                const bool on = (y == 0) ? detail::in_crescent(px, c, shape) : detail::in_star(px, c, shape);
                if (on) row[r * side + cc] = 1.0;
            }
        }
    }
    return ds;
}

/// (class label, bias-conflicting?) -> sample indices. Partition of [0, n).
inline std::map<std::pair<int, bool>, std::vector<std::size_t>> group_indices(const SCDataset& ds) {
    std::map<std::pair<int, bool>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        groups[{ds.labels_y[i], ds.bias_conflicting(i)}].push_back(i);
    }
    return groups;
}

} // namespace sclab
