#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sclab/dataset.hpp"
#include "sclab/model.hpp"
#include "sclab/numeric.hpp"

namespace sclab {

enum class PruneMethod { structured_neuron, magnitude };

struct PruneSpec {
    PruneMethod method = PruneMethod::structured_neuron;
    double kappa = 0.0;

    void validate() const {
        if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("PruneSpec: kappa outside [0,1]");
    }
};

/// Fraction of entries that are (numerically) zero: 1 - |z|_0 / d.
inline double sparsity(std::span<const double> z) {
    if (z.empty()) throw std::invalid_argument("sparsity: empty vector");
    return static_cast<double>(z.size() - l0_norm(z)) / static_cast<double>(z.size());
}

/// 1 - |z - y*|_q / |z|_q where y* is the best approximation of z supported
/// on at most ceil(kappa*d) entries. For any q >= 1 the optimum keeps the
/// largest-magnitude entries, so this is closed form. A zero vector is fully
/// compressible by convention (returns 1).
inline double qk_compressibility(std::span<const double> z, double q, double kappa) {
    if (z.empty()) throw std::invalid_argument("qk_compressibility: empty vector");
    if (kappa <= 0.0 || kappa > 1.0) throw std::invalid_argument("qk_compressibility: kappa outside (0,1]");
    if (!(q >= 1.0)) throw std::invalid_argument("qk_compressibility: q must be >= 1");
    const double denom = lp_norm(z, q);
    if (denom <= 0.0) return 1.0;
    const std::size_t d = z.size();
    const auto keep = static_cast<std::size_t>(std::ceil(kappa * static_cast<double>(d)));
    if (keep >= d) return 1.0;
    // Indices of the d-keep smallest magnitudes; ties break by index so the
    // kept support is deterministic.
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(z[a]), mb = std::abs(z[b]);
        return ma != mb ? ma < mb : a < b;
    });
    std::vector<std::size_t> dropped(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(d - keep));
    std::sort(dropped.begin(), dropped.end());
    std::vector<double> resid;
    resid.reserve(dropped.size());
    for (std::size_t i : dropped) resid.push_back(z[i]);
    return 1.0 - lp_norm(resid, q) / denom;
}

/// Returns a pruned copy; shapes are preserved (weights are masked to zero,
/// never removed).
///  - structured_neuron: per hidden layer, rank neurons by the l2 norm of the
///    incoming weight row and zero the incoming row plus outgoing column of
///    the floor(kappa*width) smallest.
///  - magnitude: zero the floor(kappa*P) globally smallest weights by |w|.
inline FCN prune(const FCN& f, const PruneSpec& spec) {
    spec.validate();
    FCN out = f;
    if (spec.kappa == 0.0) return out;
    if (spec.method == PruneMethod::structured_neuron) {
        for (std::size_t l = 0; l + 1 < out.num_layers(); ++l) {
            Matrix& in_w = out.weights[l];
            Matrix& out_w = out.weights[l + 1];
            const std::size_t width = in_w.rows();
            const auto cut = static_cast<std::size_t>(spec.kappa * static_cast<double>(width));
            if (cut == 0) continue;
            std::vector<std::size_t> idx(width);
            std::iota(idx.begin(), idx.end(), 0);
            std::vector<double> norms(width);
            for (std::size_t j = 0; j < width; ++j) {
                norms[j] = lp_norm({in_w.row(j), in_w.cols()}, 2.0);
            }
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return norms[a] != norms[b] ? norms[a] < norms[b] : a < b;
            });
            for (std::size_t k = 0; k < cut; ++k) {
                const std::size_t j = idx[k];
                double* row = in_w.row(j);
                std::fill(row, row + in_w.cols(), 0.0);
                for (std::size_t r = 0; r < out_w.rows(); ++r) out_w(r, j) = 0.0;
            }
        }
    } else {
        const std::size_t total = out.parameter_count();
        const auto cut = static_cast<std::size_t>(spec.kappa * static_cast<double>(total));
        if (cut == 0) return out;
        std::vector<std::pair<double, std::size_t>> mag; // (|w|, global index)
        mag.reserve(total);
        std::size_t offset = 0;
        for (const auto& w : out.weights) {
            for (double v : w.values()) mag.emplace_back(std::abs(v), offset++);
        }
        std::sort(mag.begin(), mag.end());
        std::vector<bool> zero(total, false);
        for (std::size_t k = 0; k < cut; ++k) zero[mag[k].second] = true;
        offset = 0;
        for (auto& w : out.weights) {
            for (double& v : w.values()) {
                if (zero[offset++]) v = 0.0;
            }
        }
    }
    return out;
}

struct AccuracyReport {
    double overall = 0.0;
    // (class label, bias-conflicting?) -> accuracy; empty groups are omitted.
    std::map<std::pair<int, bool>, double> groups;
};

inline AccuracyReport accuracy_from_predictions(std::span<const int> preds, const SCDataset& ds) {
    if (preds.size() != ds.size()) throw std::invalid_argument("accuracy: prediction count mismatch");
    AccuracyReport rep;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (preds[i] == ds.labels_y[i]) ++hits;
    }
    rep.overall = static_cast<double>(hits) / static_cast<double>(ds.size());
    for (const auto& [key, idx] : group_indices(ds)) {
        std::size_t ghits = 0;
        for (std::size_t i : idx) {
            if (preds[i] == ds.labels_y[i]) ++ghits;
        }
        rep.groups[key] = static_cast<double>(ghits) / static_cast<double>(idx.size());
    }
    return rep;
}

/// Argmax-rule accuracy, overall and per (class, BC?) group.
inline AccuracyReport accuracy(const FCN& f, const SCDataset& ds) {
    return accuracy_from_predictions(predict(f, ds.inputs), ds);
}

/// Grid mean of clipped retention ratios; exposed separately so the
/// aggregation itself is testable.
struct PrunabilityResult {
    double mean = 0.0;
    bool clipped = false; // true if any ratio exceeded 1.5 before clipping
};

inline PrunabilityResult aggregate_retentions(std::span<const double> ratios) {
    PrunabilityResult res;
    double sum = 0.0;
    for (double r : ratios) {
        if (r > 1.5) {
            res.clipped = true;
            r = 1.5;
        }
        sum += r;
    }
    res.mean = ratios.empty() ? 0.0 : sum / static_cast<double>(ratios.size());
    return res;
}

/// Mean accuracy-retention ratio Acc(pruned)/Acc(f) over the kappa grid
/// {0.1, ..., 0.9}.
inline PrunabilityResult kappa_prunability(const FCN& f, const SCDataset& ds_test, PruneMethod method) {
    const double base = accuracy(f, ds_test).overall;
    if (base <= 0.0) throw std::invalid_argument("kappa_prunability: unpruned accuracy is zero");
    std::vector<double> ratios;
    for (int k = 1; k <= 9; ++k) {
        const PruneSpec spec{method, static_cast<double>(k) / 10.0};
        ratios.push_back(accuracy(prune(f, spec), ds_test).overall / base);
    }
    return aggregate_retentions(ratios);
}

inline constexpr double kSelectivityEps = 1e-6;

struct SelectivityResult {
    std::vector<double> per_neuron; // NaN for dead neurons
    double mean = 0.0;              // over live neurons
    std::size_t dead_count = 0;
};

namespace detail {

// Shared CSI/BSI kernel: coverage-scaled contrast of the top
// class-conditional mean activation against the pooled rest.
inline SelectivityResult selectivity_index(const Matrix& acts, std::span<const int> labels, int num_classes) {
    const std::size_t n = acts.rows(), h = acts.cols();
    if (labels.size() != n) throw std::invalid_argument("selectivity: label count mismatch");
    if (num_classes < 2) throw std::invalid_argument("selectivity: need >= 2 classes");
    std::vector<std::size_t> class_count(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw std::invalid_argument("selectivity: label out of range");
        ++class_count[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < class_count.size(); ++c) {
        if (class_count[c] == 0) {
            throw std::invalid_argument("selectivity: class " + std::to_string(c) + " has no samples");
        }
    }

    SelectivityResult res;
    res.per_neuron.assign(h, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t live = 0;
    std::vector<double> class_sum(static_cast<std::size_t>(num_classes));
    for (std::size_t j = 0; j < h; ++j) {
        std::fill(class_sum.begin(), class_sum.end(), 0.0);
        double max_act = 0.0;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = acts(i, j);
            class_sum[static_cast<std::size_t>(labels[i])] += a;
            total += a;
            max_act = std::max(max_act, a);
        }
        if (max_act <= 0.0) {
            ++res.dead_count;
            continue;
        }
        std::size_t best = 0;
        double best_mean = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < class_sum.size(); ++c) {
            const double m = class_sum[c] / static_cast<double>(class_count[c]);
            if (m > best_mean) {
                best_mean = m;
                best = c;
            }
        }
        const double pi_max = best_mean;
        const double rest_mean = (total - class_sum[best]) / static_cast<double>(n - class_count[best]);
        // Coverage: fraction of argmax-class samples where the neuron fires.
        // The firing threshold is relative to the neuron's peak activation so
        // the index is invariant to rescaling the activations.
        const double thr = kZeroTau * max_act;
        std::size_t fired = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<std::size_t>(labels[i]) == best && acts(i, j) > thr) ++fired;
        }
        const double rho_max = static_cast<double>(fired) / static_cast<double>(class_count[best]);
        const double value = rho_max * (pi_max - rest_mean) / (pi_max + rest_mean + kSelectivityEps);
        res.per_neuron[j] = value;
        sum += value;
        ++live;
    }
    if (live == 0) {
        throw std::runtime_error("selectivity: all " + std::to_string(h) + " neurons are dead");
    }
    res.mean = sum / static_cast<double>(live);
    return res;
}

} // namespace detail

/// Class-selectivity index per neuron (post-ReLU activations, class labels).
inline SelectivityResult csi(const Matrix& acts, std::span<const int> labels, int num_classes) {
    return detail::selectivity_index(acts, labels, num_classes);
}

/// Bias-selectivity index: same statistic against the bias labels.
inline SelectivityResult bsi(const Matrix& acts, std::span<const int> bias_labels, int num_classes) {
    return detail::selectivity_index(acts, bias_labels, num_classes);
}

/// Class separation R^2 = 1 - d_within / d_total over cosine similarity,
/// self-pairs included. Zero-norm activation rows are dropped with a warning.
/// Returns 0 when the total dispersion vanishes.
inline double class_separation_r2(const Matrix& acts, std::span<const int> labels) {
    const std::size_t n = acts.rows(), h = acts.cols();
    if (labels.size() != n) throw std::invalid_argument("class_separation_r2: label count mismatch");
    int num_classes = 0;
    for (int y : labels) num_classes = std::max(num_classes, y + 1);
    if (num_classes < 2) throw std::invalid_argument("class_separation_r2: need >= 2 classes");

    // Unit-normalized rows; sums of unit vectors per class make the double
    // sums O(n*h): sum_{m,n in k} sim = |s_k|^2.
    std::vector<std::vector<double>> class_vec_sum(
        static_cast<std::size_t>(num_classes), std::vector<double>(h, 0.0));
    std::vector<std::size_t> class_count(static_cast<std::size_t>(num_classes), 0);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = acts.row(i);
        double norm = 0.0;
        for (std::size_t j = 0; j < h; ++j) norm += row[j] * row[j];
        norm = std::sqrt(norm);
        if (norm <= kZeroTau) {
            ++dropped;
            continue;
        }
        auto& s = class_vec_sum[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < h; ++j) s[j] += row[j] / norm;
        ++class_count[static_cast<std::size_t>(labels[i])];
    }
    if (dropped > 0) {
        std::fprintf(stderr, "warning: class_separation_r2 dropped %zu zero-norm rows\n", dropped);
    }
    std::size_t populated = 0;
    for (std::size_t c = 0; c < class_count.size(); ++c) populated += class_count[c] > 0 ? 1 : 0;
    if (populated < 2) throw std::invalid_argument("class_separation_r2: fewer than 2 populated classes");

    const double K = static_cast<double>(populated);
    double within = 0.0;
    std::vector<double> t(h, 0.0);
    for (std::size_t c = 0; c < class_count.size(); ++c) {
        if (class_count[c] == 0) continue;
        const double nk = static_cast<double>(class_count[c]);
        double s2 = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            s2 += class_vec_sum[c][j] * class_vec_sum[c][j];
            t[j] += class_vec_sum[c][j] / nk;
        }
        within += (1.0 - s2 / (nk * nk)) / K;
    }
    double t2 = 0.0;
    for (std::size_t j = 0; j < h; ++j) t2 += t[j] * t[j];
    const double total = 1.0 - t2 / (K * K);
    if (total <= kZeroTau) return 0.0;
    return 1.0 - within / total;
}

/// All post-training measurements for one model. Attribution fields are
/// filled by the attribution pipeline; the share fields stay unset (NaN)
/// when the dataset does not separate core and spurious columns.
struct MetricsReport {
    double test_accuracy_unbiased = 0.0;
    std::map<std::pair<int, bool>, double> group_accuracies;
    double prunability_mean = 0.0;
    bool prunability_clipped = false;
    double activation_compressibility = 0.0; // mean (2,0.1)-compressibility
    double activation_sparsity = 0.0;
    double avg_csi = 0.0;
    double avg_bsi = 0.0;
    std::size_t dead_neurons = 0;
    double class_separation_r2 = 0.0;
    double attribution_core_share = std::numeric_limits<double>::quiet_NaN();
    double attribution_spurious_share = std::numeric_limits<double>::quiet_NaN();
    double attribution_noise_share = std::numeric_limits<double>::quiet_NaN();
    double attribution_entropy = 0.0;
};

} // namespace sclab
