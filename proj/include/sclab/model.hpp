#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sclab/matrix.hpp"
#include "sclab/rng.hpp"

namespace sclab {

/// Fully connected ReLU network with no bias terms. weights[l] maps
/// activations of width widths[l] to width widths[l+1]; hidden layers apply
/// ReLU, the output layer is linear.
struct FCN {
    std::vector<std::size_t> widths; // input, hidden..., output
    std::vector<Matrix> weights;     // weights[l]: widths[l+1] x widths[l]

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return widths.front(); }
    std::size_t num_classes() const { return widths.back(); }

    std::size_t parameter_count() const {
        std::size_t p = 0;
        for (const auto& w : weights) p += w.size();
        return p;
    }
};

/// Per-layer pre- and post-activations for one batch; consumed by backward.
struct ForwardCache {
    Matrix input;             // n x d
    std::vector<Matrix> pre;  // pre[l]: n x widths[l+1], all layers
    std::vector<Matrix> post; // post[l]: ReLU(pre[l]), hidden layers only
};

/// Uniform Kaiming-style init: U[-sqrt(6/fan_in), +sqrt(6/fan_in)], giving
/// per-layer weight variance 2/fan_in.
inline FCN init_fcn(std::vector<std::size_t> widths, Rng& rng) {
    if (widths.size() < 3) throw std::invalid_argument("init_fcn: need at least one hidden layer");
    for (std::size_t w : widths) {
        if (w == 0) throw std::invalid_argument("init_fcn: zero width");
    }
    FCN f;
    f.widths = std::move(widths);
    for (std::size_t l = 0; l + 1 < f.widths.size(); ++l) {
        const std::size_t fan_in = f.widths[l];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Matrix w(f.widths[l + 1], fan_in);
        for (double& v : w.values()) v = rng.uniform(-bound, bound);
        f.weights.push_back(std::move(w));
    }
    return f;
}

inline std::pair<Matrix, ForwardCache> forward(const FCN& f, const Matrix& x) {
    if (x.cols() != f.input_dim()) throw std::invalid_argument("forward: input dim mismatch");
    ForwardCache cache;
    cache.input = x;
    Matrix act = x;
    const std::size_t L = f.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        Matrix pre = matmul_nt(act, f.weights[l]);
        cache.pre.push_back(pre);
        if (l + 1 < L) {
            for (double& v : pre.values()) v = v > 0.0 ? v : 0.0;
            cache.post.push_back(pre);
            act = std::move(pre);
        } else {
            act = std::move(pre);
        }
    }
    return {act, std::move(cache)};
}

/// Forward pass without keeping the cache; for evaluation loops.
inline Matrix logits_only(const FCN& f, const Matrix& x) {
    if (x.cols() != f.input_dim()) throw std::invalid_argument("logits_only: input dim mismatch");
    Matrix act = matmul_nt(x, f.weights[0]);
    const std::size_t L = f.num_layers();
    for (std::size_t l = 1; l < L; ++l) {
        for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
        act = matmul_nt(act, f.weights[l]);
    }
    return act;
}

/// ReLU outputs of the last hidden layer ("learned representation").
inline Matrix penultimate(const FCN& f, const Matrix& x) {
    if (x.cols() != f.input_dim()) throw std::invalid_argument("penultimate: input dim mismatch");
    Matrix act = matmul_nt(x, f.weights[0]);
    const std::size_t L = f.num_layers();
    for (std::size_t l = 0; l + 1 < L; ++l) {
        for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
        if (l + 2 < L) act = matmul_nt(act, f.weights[l + 1]);
    }
    return act;
}

/// Argmax predictions (ties break to the lowest class index). Inputs are
/// processed in chunks to keep activation buffers small.
inline std::vector<int> predict(const FCN& f, const Matrix& inputs, std::size_t chunk = 2000) {
    const std::size_t n = inputs.rows(), d = inputs.cols();
    std::vector<int> preds(n);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        Matrix block(len, d);
        for (std::size_t i = 0; i < len; ++i) {
            const double* src = inputs.row(start + i);
            std::copy(src, src + d, block.row(i));
        }
        const Matrix logits = logits_only(f, block);
        for (std::size_t i = 0; i < len; ++i) {
            const double* z = logits.row(i);
            int best = 0;
            for (std::size_t j = 1; j < logits.cols(); ++j) {
                if (z[j] > z[best]) best = static_cast<int>(j);
            }
            preds[start + i] = best;
        }
    }
    return preds;
}

/// Gradients of the summed batch loss wrt every weight matrix, given
/// d(loss)/d(logits). ReLU subgradient at 0 is 0.
inline std::vector<Matrix> backward(const FCN& f, const ForwardCache& cache, const Matrix& logit_grad) {
    const std::size_t L = f.num_layers();
    if (cache.pre.size() != L || logit_grad.rows() != cache.input.rows() ||
        logit_grad.cols() != f.num_classes()) {
        throw std::invalid_argument("backward: cache/grad shape mismatch");
    }
    std::vector<Matrix> grads(L);
    Matrix g = logit_grad; // n x widths[l+1], gradient wrt pre[l]
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& below = (l == 0) ? cache.input : cache.post[l - 1];
        grads[l] = matmul_tn(g, below);
        if (l > 0) {
            g = matmul(g, f.weights[l]); // now gradient wrt post[l-1]
            const Matrix& pre = cache.pre[l - 1];
            double* gv = g.values().data();
            const double* pv = pre.values().data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (pv[i] <= 0.0) gv[i] = 0.0;
            }
        }
    }
    return grads;
}

/// Gradient of logit `class_index` wrt the input coordinates of one sample.
inline std::vector<double> input_gradient(const FCN& f, std::span<const double> x, int class_index) {
    if (x.size() != f.input_dim()) throw std::invalid_argument("input_gradient: input dim mismatch");
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= f.num_classes()) {
        throw std::invalid_argument("input_gradient: class index out of range");
    }
    Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
    auto [logits, cache] = forward(f, xm);
    (void)logits;
    const std::size_t L = f.num_layers();
    // v = gradient wrt pre-activations of layer l, starting from the top.
    std::vector<double> v(f.num_classes(), 0.0);
    v[static_cast<std::size_t>(class_index)] = 1.0;
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& w = f.weights[l];
        std::vector<double> next(w.cols(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double vi = v[i];
            if (vi == 0.0) continue;
            const double* wrow = w.row(i);
            for (std::size_t j = 0; j < w.cols(); ++j) next[j] += vi * wrow[j];
        }
        if (l > 0) {
            const double* pre = cache.pre[l - 1].row(0);
            for (std::size_t j = 0; j < next.size(); ++j) {
                if (pre[j] <= 0.0) next[j] = 0.0;
            }
        }
        v = std::move(next);
    }
    return v;
}

} // namespace sclab
