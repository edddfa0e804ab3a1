#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sclab/dataset.hpp"
#include "sclab/model.hpp"
#include "sclab/numeric.hpp"
#include "sclab/rng.hpp"

namespace sclab {

struct AnnealSpec {
    std::size_t step = 0;
    double factor = 1.0;
};

struct TrainConfig {
    double lr = 0.1;
    std::size_t batch_size = 100;
    double momentum = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    std::size_t max_steps = 50000;
    std::optional<AnnealSpec> anneal;
    std::uint64_t seed = 0;
    std::size_t eval_every = 50; // cadence of full train/test evaluation

    void validate(std::size_t n_train) const {
        if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
        if (batch_size == 0 || batch_size > n_train) {
            throw std::invalid_argument("TrainConfig: batch_size outside [1, n]");
        }
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum outside [0,1)");
        if (l1 < 0.0 || l2 < 0.0) throw std::invalid_argument("TrainConfig: negative penalty");
        if (eval_every == 0) throw std::invalid_argument("TrainConfig: eval_every must be positive");
    }
};

/// One logged record. Batch statistics describe the minibatch seen at that
/// step; accuracies are full-set evaluations of the current weights.
struct TraceRow {
    std::size_t step = 0;
    double train_accuracy = 0.0;
    double mean_minibatch_loss = 0.0;
    double bc_loss_ratio = 0.0;
    double param_frobenius_norm = 0.0;
    double mean_max_logit = 0.0;
    double unbiased_test_accuracy = 0.0;
};

struct TrainTrace {
    std::vector<TraceRow> rows;
    bool converged = false;
    bool diverged = false;
    std::size_t steps_to_convergence = 0;
    double max_bc_loss_ratio = 0.0; // running max, updated every step
};

/// Share of the summed minibatch loss contributed by bias-conflicting
/// samples. 0 when the total loss is 0.
inline double bc_loss_ratio(std::span<const double> losses, const std::vector<bool>& bc_flags) {
    if (losses.size() != bc_flags.size()) {
        throw std::invalid_argument("bc_loss_ratio: length mismatch");
    }
    double total = 0.0, bc = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        total += losses[i];
        if (bc_flags[i]) bc += losses[i];
    }
    return total > 0.0 ? bc / total : 0.0;
}

/// Heavy-ball SGD update: buffer <- momentum*buffer + grad + l2*w + l1*sign(w),
/// w <- w - lr*buffer. `grads` must hold the minibatch-mean data gradients.
inline void sgd_step(FCN& f, const std::vector<Matrix>& grads, const TrainConfig& cfg, double lr_now,
                     std::vector<Matrix>& momentum_buffer) {
    if (grads.size() != f.num_layers()) throw std::invalid_argument("sgd_step: gradient count mismatch");
    if (momentum_buffer.empty()) {
        for (const auto& w : f.weights) momentum_buffer.emplace_back(w.rows(), w.cols());
    }
    for (std::size_t l = 0; l < f.num_layers(); ++l) {
        auto wv = f.weights[l].values();
        auto gv = grads[l].values();
        auto bv = momentum_buffer[l].values();
        if (gv.size() != wv.size()) throw std::invalid_argument("sgd_step: gradient shape mismatch");
        for (std::size_t i = 0; i < wv.size(); ++i) {
            double g = gv[i];
            if (cfg.l2 > 0.0) g += cfg.l2 * wv[i];
            if (cfg.l1 > 0.0) g += cfg.l1 * (wv[i] > 0.0 ? 1.0 : (wv[i] < 0.0 ? -1.0 : 0.0));
            const double b = cfg.momentum * bv[i] + g;
            bv[i] = b;
            wv[i] -= lr_now * b;
        }
    }
}

inline double param_norm(const FCN& f) {
    double s = 0.0;
    for (const auto& w : f.weights) {
        for (double v : w.values()) s += v * v;
    }
    return std::sqrt(s);
}

namespace detail {

inline double dataset_accuracy(const FCN& f, const SCDataset& ds) {
    const auto preds = predict(f, ds.inputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (preds[i] == ds.labels_y[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

} // namespace detail

/// Minibatch SGD with a constant (optionally step-annealed) learning rate.
/// Stops at the first full-train-set accuracy of 100% (checked every
/// eval_every steps) or at max_steps. A run is marked diverged when the
/// minibatch loss turns non-finite, or when train accuracy is still within
/// 0.05 of chance at half the step budget; divergence halts training and
/// returns the partial trace rather than throwing.
inline TrainTrace train(FCN& f, const SCDataset& ds_train, const SCDataset& ds_test, const TrainConfig& cfg) {
    cfg.validate(ds_train.size());
    if (ds_train.dim() != f.input_dim() || ds_test.dim() != f.input_dim()) {
        throw std::invalid_argument("train: dataset/model dimension mismatch");
    }

    TrainTrace trace;
    Rng shuffle_rng = substream(cfg.seed, kSeedTagShuffle);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    std::vector<Matrix> momentum_buffer;
    const std::size_t n = ds_train.size(), d = ds_train.dim(), b = cfg.batch_size;
    Matrix batch(b, d);
    std::vector<int> batch_y(b);
    std::vector<bool> batch_bc(b);
    const double chance = 1.0 / static_cast<double>(ds_train.num_classes);

    double lr_now = cfg.lr;
    for (std::size_t step = 0; step <= cfg.max_steps; ++step) {
        if (cfg.anneal && step == cfg.anneal->step && step > 0) lr_now *= cfg.anneal->factor;

        // Assemble the minibatch for this step.
        if (cursor + b > n || order.empty()) {
            order = shuffle_rng.permutation(n);
            cursor = 0;
        }
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t idx = order[cursor + i];
            const double* src = ds_train.inputs.row(idx);
            std::copy(src, src + d, batch.row(i));
            batch_y[i] = ds_train.labels_y[idx];
            batch_bc[i] = ds_train.bias_conflicting(idx);
        }

        auto [logits, cache] = forward(f, batch);
        bool finite = logits.all_finite();
        double mean_loss = 0.0, ratio = 0.0, mean_max_logit = 0.0;
        CrossEntropyResult ce;
        if (finite) {
            ce = softmax_cross_entropy(logits, batch_y);
            for (double l : ce.loss) mean_loss += l;
            mean_loss /= static_cast<double>(b);
            ratio = bc_loss_ratio(ce.loss, batch_bc);
            trace.max_bc_loss_ratio = std::max(trace.max_bc_loss_ratio, ratio);
            for (std::size_t i = 0; i < b; ++i) {
                const double* z = logits.row(i);
                double m = z[0];
                for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, z[j]);
                mean_max_logit += m;
            }
            mean_max_logit /= static_cast<double>(b);
            finite = std::isfinite(mean_loss);
        }

        const bool at_eval = (step % cfg.eval_every == 0) || step == cfg.max_steps || !finite;
        if (at_eval) {
            TraceRow row;
            row.step = step;
            row.mean_minibatch_loss = mean_loss;
            row.bc_loss_ratio = ratio;
            row.mean_max_logit = mean_max_logit;
            row.param_frobenius_norm = param_norm(f);
            row.train_accuracy = finite ? detail::dataset_accuracy(f, ds_train) : 0.0;
            row.unbiased_test_accuracy = finite ? detail::dataset_accuracy(f, ds_test) : 0.0;
            trace.rows.push_back(row);

            if (!finite) {
                trace.diverged = true;
                break;
            }
            if (row.train_accuracy == 1.0) {
                trace.converged = true;
                trace.steps_to_convergence = step;
                break;
            }
            if (step >= cfg.max_steps / 2 && row.train_accuracy < chance + 0.05) {
                trace.diverged = true;
                break;
            }
        }
        if (step == cfg.max_steps) break;

        Matrix logit_grad = ce.grad;
        const double inv_b = 1.0 / static_cast<double>(b);
        for (double& v : logit_grad.values()) v *= inv_b;
        const auto grads = backward(f, cache, logit_grad);
        sgd_step(f, grads, cfg, lr_now, momentum_buffer);
        cursor += b;
    }
    return trace;
}

} // namespace sclab
